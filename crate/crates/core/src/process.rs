//! External command execution with wall-clock timeouts.
//!
//! Commands are given as templates such as `javac -d {dir} {source}` and
//! split with shell quoting rules; no shell is involved unless the template
//! invokes one explicitly. Each child runs in its own process group so a
//! timeout kills the whole tree.

use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;
use wait_timeout::ChildExt;

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error("command template is empty")]
    EmptyTemplate,
    #[error("cannot parse command template: {0}")]
    Parse(String),
    #[error("command not found: {0}")]
    CommandNotFound(String),
    #[error("cannot run {program}: {source}")]
    Io {
        program: String,
        #[source]
        source: io::Error,
    },
}

/// A command line with `{source}` and `{dir}` placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandTemplate {
    argv: Vec<String>,
}

impl CommandTemplate {
    pub fn parse(template: &str) -> Result<Self, ProcessError> {
        let argv = shell_words::split(template).map_err(|e| ProcessError::Parse(e.to_string()))?;
        if argv.is_empty() {
            return Err(ProcessError::EmptyTemplate);
        }
        Ok(Self { argv })
    }

    pub fn program(&self) -> &str {
        &self.argv[0]
    }

    /// Substitutes placeholders inside every argument.
    pub fn render(&self, source: &Path, dir: &Path) -> Vec<String> {
        let source = source.to_string_lossy();
        let dir = dir.to_string_lossy();
        self.argv
            .iter()
            .map(|a| a.replace("{source}", &source).replace("{dir}", &dir))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandOutput {
    /// `None` when killed by a signal, including our own timeout kill.
    pub exit_code: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub elapsed: Duration,
}

impl CommandOutput {
    pub fn success(&self) -> bool {
        !self.timed_out && self.exit_code == Some(0)
    }
}

fn drain<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

fn kill_group(child: &mut Child) {
    let pid = child.id() as libc::pid_t;
    // SAFETY: signalling a process group we created; failure is harmless.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Runs `argv` in `cwd`, killing it after `timeout`.
pub fn run_command(argv: &[String], cwd: &Path, timeout: Duration) -> Result<CommandOutput, ProcessError> {
    let program = argv.first().ok_or(ProcessError::EmptyTemplate)?;
    let start = Instant::now();
    let mut child = Command::new(program)
        .args(&argv[1..])
        .current_dir(cwd)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0)
        .spawn()
        .map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => ProcessError::CommandNotFound(program.clone()),
            _ => ProcessError::Io { program: program.clone(), source: e },
        })?;
    let out = drain(child.stdout.take());
    let err = drain(child.stderr.take());

    let io_err = |e| ProcessError::Io { program: program.clone(), source: e };
    let (status, timed_out) = match child.wait_timeout(timeout).map_err(io_err)? {
        Some(s) => (Some(s), false),
        None => {
            kill_group(&mut child);
            (child.wait().ok(), true)
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    Ok(CommandOutput {
        exit_code: if timed_out { None } else { status.and_then(|s| s.code()) },
        stdout,
        stderr,
        timed_out,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Vec<String> {
        vec!["sh".into(), "-c".into(), script.into()]
    }

    #[test]
    fn template_substitutes_placeholders() {
        let t = CommandTemplate::parse("javac -d '{dir}/out dir' {source}").unwrap();
        assert_eq!(t.program(), "javac");
        assert_eq!(
            t.render(Path::new("/w/A.java"), Path::new("/w")),
            vec!["javac", "-d", "/w/out dir", "/w/A.java"]
        );
        assert!(matches!(CommandTemplate::parse("  "), Err(ProcessError::EmptyTemplate)));
        assert!(matches!(CommandTemplate::parse("a 'b"), Err(ProcessError::Parse(_))));
    }

    #[test]
    fn captures_output_and_status() {
        let o = run_command(&sh("echo hi; echo oops >&2; exit 3"), Path::new("."), Duration::from_secs(10)).unwrap();
        assert_eq!(o.stdout, "hi\n");
        assert_eq!(o.stderr, "oops\n");
        assert_eq!(o.exit_code, Some(3));
        assert!(!o.success());
    }

    #[test]
    fn timeout_kills_process_tree() {
        let o = run_command(&sh("echo early; sleep 30 & sleep 30"), Path::new("."), Duration::from_millis(300)).unwrap();
        assert!(o.timed_out);
        assert_eq!(o.stdout, "early\n");
        assert!(o.elapsed < Duration::from_secs(10));
    }

    #[test]
    fn missing_program_reported() {
        let argv = vec!["definitely-not-a-real-program-xyz".to_string()];
        assert!(matches!(
            run_command(&argv, Path::new("."), Duration::from_secs(1)),
            Err(ProcessError::CommandNotFound(_))
        ));
    }
}
