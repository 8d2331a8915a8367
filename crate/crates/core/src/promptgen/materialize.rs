use serde::{Deserialize, Serialize};

use super::MutationPair;
use crate::chunker::CodeChunk;
use crate::corpus::split_lines;

/// A full program source that differs from the original on one line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mutant {
    pub id: String,
    pub bug_id: String,
    pub chunk_id: usize,
    pub target_line: usize,
    pub original_line_text: String,
    pub mutated_line_text: String,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    /// `precode` only matches lines outside the chunk.
    OutOfChunk,
    /// `precode` matches no line of the program.
    NoMatch,
    /// `precode` or `aftercode` spans more than one line.
    MultiLine,
    EmptyPrecode,
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Rejection::OutOfChunk => "out-of-chunk",
            Rejection::NoMatch => "no-match",
            Rejection::MultiLine => "multi-line",
            Rejection::EmptyPrecode => "empty-precode",
        })
    }
}

fn split_terminator(line: &str) -> (&str, &str) {
    let body = line.trim_end_matches(['\n', '\r']);
    (body, &line[body.len()..])
}

/// Applies `pair` to a pristine copy of `original`.
///
/// The first chunk line whose trimmed text equals the trimmed `precode` is
/// replaced by `aftercode`, re-indented with that line's leading
/// whitespace.
pub fn materialize(
    original: &str,
    chunk: &CodeChunk,
    pair: &MutationPair,
    id: &str,
    bug_id: &str,
) -> Result<Mutant, Rejection> {
    let precode = pair.precode.trim();
    if precode.is_empty() {
        return Err(Rejection::EmptyPrecode);
    }
    if precode.contains(['\n', '\r']) || pair.aftercode.trim().contains(['\n', '\r']) {
        return Err(Rejection::MultiLine);
    }
    let lines = split_lines(original);
    let matches = |line: &str| split_terminator(line).0.trim() == precode;

    let target = chunk
        .line_numbers
        .iter()
        .copied()
        .find(|&n| n >= 1 && n <= lines.len() && matches(lines[n - 1]));
    let Some(target) = target else {
        return Err(if lines.iter().any(|l| matches(l)) {
            Rejection::OutOfChunk
        } else {
            Rejection::NoMatch
        });
    };

    let (body, terminator) = split_terminator(lines[target - 1]);
    let indent = &body[..body.len() - body.trim_start().len()];
    let mutated = format!("{indent}{}", pair.aftercode.trim());
    let mut source = String::with_capacity(original.len() + mutated.len());
    for (i, line) in lines.iter().enumerate() {
        if i + 1 == target {
            source.push_str(&mutated);
            source.push_str(terminator);
        } else {
            source.push_str(line);
        }
    }
    Ok(Mutant {
        id: id.to_string(),
        bug_id: bug_id.to_string(),
        chunk_id: chunk.id,
        target_line: target,
        original_line_text: body.to_string(),
        mutated_line_text: mutated,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunker::ChunkKind;

    const SRC: &str = "int f(int a) {\n    int x = a;\n    x++;\n    return x;\n}\n";

    fn chunk(lines: &[usize]) -> CodeChunk {
        CodeChunk {
            id: 3,
            kind: ChunkKind::Segment,
            line_numbers: lines.to_vec(),
            text: String::new(),
            target: None,
        }
    }

    fn pair(pre: &str, after: &str) -> MutationPair {
        MutationPair { precode: pre.into(), aftercode: after.into() }
    }

    #[test]
    fn replaces_matching_chunk_line_with_indent() {
        let m = materialize(SRC, &chunk(&[2, 3]), &pair("int x = a;", "  int x = -a;"), "m1", "b1").unwrap();
        assert_eq!(m.target_line, 2);
        assert_eq!(m.chunk_id, 3);
        assert_eq!(m.original_line_text, "    int x = a;");
        assert_eq!(m.mutated_line_text, "    int x = -a;");
        assert_eq!(m.source, "int f(int a) {\n    int x = -a;\n    x++;\n    return x;\n}\n");
    }

    #[test]
    fn out_of_chunk_and_no_match() {
        let c = chunk(&[2, 3]);
        assert_eq!(materialize(SRC, &c, &pair("return x;", "return 0;"), "m", "b"), Err(Rejection::OutOfChunk));
        assert_eq!(materialize(SRC, &c, &pair("y--;", "y++;"), "m", "b"), Err(Rejection::NoMatch));
    }

    #[test]
    fn multi_line_and_empty() {
        let c = chunk(&[2, 3]);
        assert_eq!(materialize(SRC, &c, &pair("x++;", "x=1;\ny=2;"), "m", "b"), Err(Rejection::MultiLine));
        assert_eq!(materialize(SRC, &c, &pair(" ", "y;"), "m", "b"), Err(Rejection::EmptyPrecode));
    }

    #[test]
    fn first_match_inside_chunk_wins() {
        let src = "void f() {\n  x++;\n  x++;\n  x++;\n}";
        let m = materialize(src, &chunk(&[3, 4]), &pair("x++;", "x--;"), "m", "b").unwrap();
        assert_eq!(m.target_line, 3);
        assert_eq!(m.source, "void f() {\n  x++;\n  x--;\n  x++;\n}");
    }

    #[test]
    fn keeps_crlf_terminators() {
        let src = "a;\r\nb;\r\n";
        let m = materialize(src, &chunk(&[2]), &pair("b;", "c;"), "m", "b").unwrap();
        assert_eq!(m.source, "a;\r\nc;\r\n");
    }
}
