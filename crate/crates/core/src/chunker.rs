//! Logic-based chunking of a focal method.
//!
//! Control-flow statements (`if`, `for`, `while`, `do`/`while`, `try`) are
//! claimed bottom-up: the statement starting on the latest line goes first,
//! so nested statements take their own lines before the statements that
//! enclose them. Each claimed statement also takes the run of local
//! variable declarations directly above it in the same block. Lines that no
//! statement claimed are grouped into runs of consecutive lines.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tree_sitter::{Node, Parser, Tree};

const WRAPPER_OPEN: &str = "class __MutragFocal__ {\n";
const WRAPPER_CLOSE: &str = "\n}\n";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChunkError {
    #[error("unsupported grammar `{0}`")]
    UnsupportedGrammar(String),
    #[error("syntax error at line {line}: {detail}")]
    Syntax { line: usize, detail: String },
    #[error("source does not contain exactly one method declaration")]
    NotAMethod,
    #[error("empty method source")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grammar {
    #[default]
    Java,
}

impl Grammar {
    pub fn name(self) -> &'static str {
        match self {
            Grammar::Java => "java",
        }
    }

    /// Human-readable language name used in prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Grammar::Java => "Java",
        }
    }

    fn language(self) -> tree_sitter::Language {
        match self {
            Grammar::Java => tree_sitter_java::LANGUAGE.into(),
        }
    }
}

impl FromStr for Grammar {
    type Err = ChunkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "java" => Ok(Grammar::Java),
            other => Err(ChunkError::UnsupportedGrammar(other.to_string())),
        }
    }
}

/// A parsed method. Line numbers are absolute: the first line of `source`
/// is `start_line`.
pub struct FocalMethod {
    source: String,
    start_line: usize,
    lines: Vec<String>,
    grammar: Grammar,
    tree: Tree,
}

impl fmt::Debug for FocalMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FocalMethod")
            .field("start_line", &self.start_line)
            .field("lines", &self.lines.len())
            .field("grammar", &self.grammar)
            .finish()
    }
}

impl FocalMethod {
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn grammar(&self) -> Grammar {
        self.grammar
    }

    pub fn start_line(&self) -> usize {
        self.start_line
    }

    pub fn end_line(&self) -> usize {
        self.start_line + self.lines.len() - 1
    }

    pub fn line_count(&self) -> usize {
        self.lines.len()
    }

    pub fn line_set(&self) -> BTreeSet<usize> {
        (self.start_line..=self.end_line()).collect()
    }

    pub fn line_text(&self, line: usize) -> Option<&str> {
        line.checked_sub(self.start_line)
            .and_then(|i| self.lines.get(i))
            .map(String::as_str)
    }

    /// Text of the given lines, in ascending order, joined by newlines.
    pub fn text_of(&self, lines: &BTreeSet<usize>) -> String {
        lines
            .iter()
            .filter_map(|&l| self.line_text(l))
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn to_line(&self, row: usize) -> usize {
        // row 0 is the wrapper's opening line
        (self.start_line + row.saturating_sub(1)).clamp(self.start_line, self.end_line())
    }

    fn method_node(&self) -> Node<'_> {
        find_method(self.tree.root_node()).expect("validated at parse time")
    }
}

fn find_method(root: Node<'_>) -> Option<Node<'_>> {
    let class = root.named_child(0)?;
    let body = class.child_by_field_name("body")?;
    let mut cursor = body.walk();
    let members: Vec<Node<'_>> = body
        .named_children(&mut cursor)
        .filter(|n| !n.is_extra())
        .collect();
    match members.as_slice() {
        [m] if matches!(m.kind(), "method_declaration" | "constructor_declaration") => Some(*m),
        _ => None,
    }
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
    children.into_iter().find_map(first_error)
}

/// Parses `source` as a single method whose first line is `start_line`.
pub fn parse_method(source: &str, start_line: usize, grammar: Grammar) -> Result<FocalMethod, ChunkError> {
    if source.trim().is_empty() {
        return Err(ChunkError::Empty);
    }
    let wrapped = format!("{WRAPPER_OPEN}{source}{WRAPPER_CLOSE}");
    let mut parser = Parser::new();
    parser
        .set_language(&grammar.language())
        .map_err(|e| ChunkError::UnsupportedGrammar(e.to_string()))?;
    let tree = parser
        .parse(&wrapped, None)
        .ok_or_else(|| ChunkError::UnsupportedGrammar(grammar.name().to_string()))?;
    let method = FocalMethod {
        source: source.to_string(),
        start_line: start_line.max(1),
        lines: source.lines().map(str::to_string).collect(),
        grammar,
        tree,
    };
    let root = method.tree.root_node();
    if let Some(err) = first_error(root) {
        let detail = if err.is_missing() {
            format!("missing `{}`", err.kind())
        } else {
            let text = &wrapped[err.byte_range()];
            let snippet: String = text.chars().take(40).collect();
            format!("unexpected `{}`", snippet.trim())
        };
        return Err(ChunkError::Syntax {
            line: method.to_line(err.start_position().row),
            detail,
        });
    }
    if find_method(root).is_none() {
        return Err(ChunkError::NotAMethod);
    }
    Ok(method)
}

/// Syntax-checks a whole compilation unit. Not a compiler: only parse
/// errors are detected.
pub fn check_syntax(source: &str, grammar: Grammar) -> Result<(), ChunkError> {
    let mut parser = Parser::new();
    parser
        .set_language(&grammar.language())
        .map_err(|e| ChunkError::UnsupportedGrammar(e.to_string()))?;
    let tree = parser
        .parse(source, None)
        .ok_or_else(|| ChunkError::UnsupportedGrammar(grammar.name().to_string()))?;
    match first_error(tree.root_node()) {
        None => Ok(()),
        Some(err) => Err(ChunkError::Syntax {
            line: err.start_position().row + 1,
            detail: if err.is_missing() {
                format!("missing `{}`", err.kind())
            } else {
                format!("unexpected `{}`", source[err.byte_range()].chars().take(40).collect::<String>().trim())
            },
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    IfStmt,
    ForStmt,
    WhileStmt,
    DoWhileStmt,
    TryStmt,
}

impl TargetKind {
    fn from_node_kind(kind: &str) -> Option<Self> {
        Some(match kind {
            "if_statement" => TargetKind::IfStmt,
            "for_statement" | "enhanced_for_statement" => TargetKind::ForStmt,
            "while_statement" => TargetKind::WhileStmt,
            "do_statement" => TargetKind::DoWhileStmt,
            "try_statement" | "try_with_resources_statement" => TargetKind::TryStmt,
            _ => return None,
        })
    }
}

/// A control-flow statement found in the method, with its physical line
/// span and the declaration lines directly above it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetNode {
    pub kind: TargetKind,
    pub start_line: usize,
    pub end_line: usize,
    /// Nesting depth below the method node.
    pub depth: usize,
    preceding_decls: BTreeSet<usize>,
}

impl TargetNode {
    pub fn line_set(&self) -> BTreeSet<usize> {
        (self.start_line..=self.end_line).collect()
    }
}

const BLOCK_KINDS: &[&str] = &["block", "constructor_body", "switch_block_statement_group"];

fn span(m: &FocalMethod, node: Node<'_>) -> (usize, usize) {
    let start = m.to_line(node.start_position().row);
    let end_pos = node.end_position();
    let end_row = if end_pos.column == 0 && end_pos.row > node.start_position().row {
        end_pos.row - 1
    } else {
        end_pos.row
    };
    (start, m.to_line(end_row))
}

fn decl_run(m: &FocalMethod, node: Node<'_>) -> BTreeSet<usize> {
    let mut lines = BTreeSet::new();
    if !node.parent().is_some_and(|p| BLOCK_KINDS.contains(&p.kind())) {
        return lines;
    }
    let mut prev = node.prev_named_sibling();
    while let Some(sib) = prev {
        if sib.kind() != "local_variable_declaration" {
            break;
        }
        let (s, e) = span(m, sib);
        lines.extend(s..=e);
        prev = sib.prev_named_sibling();
    }
    lines
}

/// All control-flow statements of the method, latest start line first;
/// statements sharing a start line are ordered innermost first.
pub fn collect_target_nodes(m: &FocalMethod) -> Vec<TargetNode> {
    fn walk(m: &FocalMethod, node: Node<'_>, depth: usize, out: &mut Vec<TargetNode>) {
        if let Some(kind) = TargetKind::from_node_kind(node.kind()) {
            let (start_line, end_line) = span(m, node);
            out.push(TargetNode {
                kind,
                start_line,
                end_line,
                depth,
                preceding_decls: decl_run(m, node),
            });
        }
        let mut cursor = node.walk();
        let children: Vec<Node<'_>> = node.named_children(&mut cursor).collect();
        for child in children {
            walk(m, child, depth + 1, out);
        }
    }
    let mut out = Vec::new();
    walk(m, m.method_node(), 0, &mut out);
    out.sort_by(|a, b| {
        b.start_line
            .cmp(&a.start_line)
            .then_with(|| b.depth.cmp(&a.depth))
    });
    out
}

/// Lines of the local-variable declarations immediately above `node` in its
/// block, restricted to `remaining`.
pub fn preceding_decl_stmts(node: &TargetNode, remaining: &BTreeSet<usize>) -> BTreeSet<usize> {
    node.preceding_decls.intersection(remaining).copied().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkKind {
    ControlFlow,
    Segment,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeChunk {
    pub id: usize,
    pub kind: ChunkKind,
    /// Ascending absolute line numbers.
    pub line_numbers: Vec<usize>,
    /// The chunk's lines joined by newlines.
    pub text: String,
    /// Statement kind that claimed a control-flow chunk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<TargetKind>,
}

impl CodeChunk {
    pub fn line_count(&self) -> usize {
        self.line_numbers.len()
    }

    pub fn contains(&self, line: usize) -> bool {
        self.line_numbers.binary_search(&line).is_ok()
    }

    /// Inclusive ranges of consecutive lines, e.g. `3-5,9`.
    pub fn ranges(&self) -> Vec<(usize, usize)> {
        let mut out: Vec<(usize, usize)> = Vec::new();
        for &l in &self.line_numbers {
            match out.last_mut() {
                Some((_, end)) if *end + 1 == l => *end = l,
                _ => out.push((l, l)),
            }
        }
        out
    }
}

/// The whole method as one chunk, used when chunking is disabled.
pub fn whole_method_chunk(m: &FocalMethod) -> CodeChunk {
    let lines = m.line_set();
    CodeChunk {
        id: 0,
        kind: ChunkKind::Segment,
        text: m.text_of(&lines),
        line_numbers: lines.into_iter().collect(),
        target: None,
    }
}

/// Partitions the method's lines into logic-based chunks.
pub fn chunk_method(m: &FocalMethod) -> Vec<CodeChunk> {
    let mut remaining = m.line_set();
    let mut chunks = Vec::new();

    for node in collect_target_nodes(m) {
        let node_lines = node.line_set();
        let claimed: BTreeSet<usize> = remaining.intersection(&node_lines).copied().collect();
        if claimed.is_empty() {
            continue;
        }
        let decls = preceding_decl_stmts(&node, &remaining);
        let lines: BTreeSet<usize> = claimed.union(&decls).copied().collect();
        chunks.push(CodeChunk {
            id: chunks.len(),
            kind: ChunkKind::ControlFlow,
            text: m.text_of(&lines),
            line_numbers: lines.into_iter().collect(),
            target: Some(node.kind),
        });
        remaining.retain(|l| !node_lines.contains(l) && !decls.contains(l));
    }

    let mut segment: Vec<usize> = Vec::new();
    let flush = |segment: &mut Vec<usize>, chunks: &mut Vec<CodeChunk>| {
        if segment.is_empty() {
            return;
        }
        let lines: BTreeSet<usize> = segment.drain(..).collect();
        chunks.push(CodeChunk {
            id: chunks.len(),
            kind: ChunkKind::Segment,
            text: m.text_of(&lines),
            line_numbers: lines.into_iter().collect(),
            target: None,
        });
    };
    for l in remaining {
        if segment.last().is_some_and(|&last| last + 1 != l) {
            flush(&mut segment, &mut chunks);
        }
        segment.push(l);
    }
    flush(&mut segment, &mut chunks);
    chunks
}

/// Reassembles method text from chunks by ordering all chunk lines by line
/// number.
pub fn reconstruct(chunks: &[CodeChunk]) -> String {
    let mut lines: Vec<(usize, &str)> = chunks
        .iter()
        .flat_map(|c| c.line_numbers.iter().copied().zip(c.text.split('\n')))
        .collect();
    lines.sort_by_key(|(n, _)| *n);
    lines.into_iter().map(|(_, t)| t).collect::<Vec<_>>().join("\n")
}
