use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mutrag_core::llm::{
    complete_batch, BackendConfig, ChatBackend, Completion, HttpChatBackend, LlmError, PromptRequest,
    TokenUsage,
};

struct Served {
    bodies: Arc<Mutex<Vec<String>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

fn read_request(stream: &mut TcpStream) -> (String, Option<String>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut len = 0usize;
    let mut auth = None;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        let t = line.trim_end();
        if t.is_empty() {
            break;
        }
        let lower = t.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if lower.starts_with("authorization:") {
            auth = Some(t["authorization:".len()..].trim().to_string());
        }
    }
    let mut body = vec![0u8; len];
    reader.read_exact(&mut body).unwrap();
    (String::from_utf8(body).unwrap(), auth)
}

/// Serves one canned `(status, extra headers, body)` per connection, in order.
fn serve(replies: Vec<(u16, &'static str, String)>) -> (String, Served) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let auth = Arc::new(Mutex::new(Vec::new()));
    let (b, a) = (bodies.clone(), auth.clone());
    thread::spawn(move || {
        for (status, headers, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let (req, key) = read_request(&mut stream);
            b.lock().unwrap().push(req);
            a.lock().unwrap().push(key);
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n{headers}\r\n{body}",
                body.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, Served { bodies, auth })
}

fn ok_body(text: &str) -> String {
    serde_json::json!({
        "choices": [{ "message": { "role": "assistant", "content": text } }],
        "usage": { "prompt_tokens": 11, "completion_tokens": 5 }
    })
    .to_string()
}

fn fast_config(url: &str) -> BackendConfig {
    BackendConfig {
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        timeout_secs: 5,
        api_key_env: "MUTRAG_TEST_UNSET_KEY".into(),
        ..BackendConfig::new(url, "test-model")
    }
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (url, served) = serve(vec![
        (429, "", "slow down".into()),
        (429, "retry-after: 0\r\n", "slow down".into()),
        (200, "", ok_body("<json>[]</json>")),
    ]);
    let backend = HttpChatBackend::new(fast_config(&url)).unwrap().with_api_key("sekrit");
    let c = backend.complete("hello prompt").unwrap();
    assert_eq!(c.text, "<json>[]</json>");
    assert_eq!(c.retries, 2);
    assert_eq!(c.usage, TokenUsage { prompt_tokens: 11, completion_tokens: 5 });

    let bodies = served.bodies.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["model"], "test-model");
    assert_eq!(sent["messages"][0]["role"], "user");
    assert_eq!(sent["messages"][0]["content"], "hello prompt");
    assert!(sent.get("temperature").is_none());
    assert_eq!(served.auth.lock().unwrap()[0].as_deref(), Some("Bearer sekrit"));
}

#[test]
fn exhausted_retries_report_last_status() {
    let (url, _served) = serve(vec![
        (503, "", "down".into()),
        (502, "", "down".into()),
    ]);
    let cfg = BackendConfig { max_retries: 1, ..fast_config(&url) };
    let err = HttpChatBackend::new(cfg).unwrap().complete("p").unwrap_err();
    match err {
        LlmError::RetriesExhausted { attempts, last_status, .. } => {
            assert_eq!(attempts, 2);
            assert_eq!(last_status, Some(502));
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, served) = serve(vec![(401, "", "no".into())]);
    let err = HttpChatBackend::new(fast_config(&url)).unwrap().complete("p").unwrap_err();
    assert!(matches!(err, LlmError::Auth { status: 401 }));
    assert_eq!(served.bodies.lock().unwrap().len(), 1);
}

#[test]
fn malformed_reply_is_an_error() {
    let (url, _served) = serve(vec![(200, "", "{\"nope\": 1}".into())]);
    let err = HttpChatBackend::new(fast_config(&url)).unwrap().complete("p").unwrap_err();
    assert!(matches!(err, LlmError::Malformed(_)));
}

struct Counting {
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

impl ChatBackend for Counting {
    fn id(&self) -> String {
        "counting".into()
    }

    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        thread::sleep(Duration::from_millis(15));
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        if prompt == "p3" {
            return Err(LlmError::Malformed("boom".into()));
        }
        Ok(Completion {
            text: format!("re:{prompt}"),
            usage: TokenUsage { prompt_tokens: 2, completion_tokens: 1 },
            retries: 0,
        })
    }
}

#[test]
fn batch_respects_concurrency_and_order() {
    let backend = Counting { in_flight: AtomicUsize::new(0), peak: AtomicUsize::new(0) };
    let prompts: Vec<PromptRequest> = (0..12)
        .map(|i| PromptRequest { id: format!("id{i}"), prompt: format!("p{i}") })
        .collect();
    let out = complete_batch(&backend, &prompts, 3);
    let peak = backend.peak.load(Ordering::SeqCst);
    assert!(peak <= 3 && peak >= 2, "peak {peak}");
    assert_eq!(out.items.len(), 12);
    for (i, item) in out.items.iter().enumerate() {
        assert_eq!(item.prompt_id, format!("id{i}"));
        if i == 3 {
            assert!(item.result.is_err());
        } else {
            assert_eq!(item.result.as_ref().unwrap().text, format!("re:p{i}"));
        }
    }
    assert_eq!(out.usage, TokenUsage { prompt_tokens: 22, completion_tokens: 11 });
}
