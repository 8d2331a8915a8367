use std::hash::Hasher;

use fnv::FnvHasher;

use super::{CodeEmbedding, EmbedError, EmbeddingBackend};

pub const DEFAULT_DIMENSION: usize = 512;

const OPERATORS: &[&str] = &[
    ">>>=", "<<=", ">>=", ">>>", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=",
    ">=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<", ">>",
];

/// Splits code on identifier and operator boundaries. Comments and
/// whitespace are dropped; string and char literals stay whole.
pub fn tokenize(code: &str) -> Vec<&str> {
    let bytes = code.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
        } else if code[i..].starts_with("//") {
            i = code[i..].find('\n').map_or(bytes.len(), |p| i + p);
        } else if code[i..].starts_with("/*") {
            i = code[i + 2..].find("*/").map_or(bytes.len(), |p| i + 2 + p + 2);
        } else if c == b'"' || c == b'\'' {
            let start = i;
            i += 1;
            while i < bytes.len() && bytes[i] != c && bytes[i] != b'\n' {
                i += if bytes[i] == b'\\' { 2 } else { 1 };
            }
            i = (i + 1).min(bytes.len());
            tokens.push(&code[start..i]);
        } else if c.is_ascii_alphanumeric() || c == b'_' || c == b'$' || c >= 0x80 {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric()
                    || bytes[i] == b'_'
                    || bytes[i] == b'$'
                    || bytes[i] >= 0x80
                    || (bytes[i] == b'.' && bytes[start].is_ascii_digit()))
            {
                i += 1;
            }
            tokens.push(&code[start..i]);
        } else {
            let op = OPERATORS
                .iter()
                .find(|op| code[i..].starts_with(**op))
                .map_or(1, |op| op.len());
            tokens.push(&code[i..i + op]);
            i += op;
        }
    }
    tokens
}

/// Hashed token-trigram counts. Deterministic across runs and platforms.
#[derive(Debug, Clone)]
pub struct LexicalEmbedder {
    dimension: usize,
    id: String,
}

impl LexicalEmbedder {
    pub fn new(dimension: usize) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self {
            dimension,
            id: format!("lexical-trigram-fnv1a-d{dimension}"),
        }
    }

    pub(crate) fn bucket(&self, gram: &[&str]) -> usize {
        let mut hasher = FnvHasher::default();
        for token in gram {
            hasher.write(token.as_bytes());
            hasher.write_u8(0xff);
        }
        (hasher.finish() % self.dimension as u64) as usize
    }
}

impl Default for LexicalEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION)
    }
}

impl EmbeddingBackend for LexicalEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, code: &str) -> Result<CodeEmbedding, EmbedError> {
        let tokens = tokenize(code);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyInput);
        }
        let mut values = vec![0f32; self.dimension];
        if tokens.len() < 3 {
            values[self.bucket(&tokens)] += 1.0;
        } else {
            for gram in tokens.windows(3) {
                values[self.bucket(gram)] += 1.0;
            }
        }
        Ok(CodeEmbedding {
            values,
            backend_id: self.id.clone(),
        })
    }
}
