//! Code embeddings and exhaustive nearest-neighbour retrieval.
//!
//! The default backend is [`LexicalEmbedder`], which hashes token trigrams
//! into a fixed number of buckets and needs no network access. A
//! [`RemoteEmbedder`] talks to an HTTP embedding service instead. Whatever
//! produced the vectors is recorded in the index as its `backend_id`.

mod index;
mod lexical;
mod remote;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{build_index, Hit, IndexEntry, IndexError, VectorIndex};
pub use lexical::{tokenize, LexicalEmbedder, DEFAULT_DIMENSION};
pub use remote::RemoteEmbedder;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty code")]
    EmptyInput,
    #[error("embedding service unreachable: {0}")]
    Unreachable(String),
    #[error("malformed embedding reply: {0}")]
    Malformed(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEmbedding {
    pub values: Vec<f32>,
    pub backend_id: String,
}

impl CodeEmbedding {
    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, code: &str) -> Result<CodeEmbedding, EmbedError>;

    fn embed_batch(&self, codes: &[&str]) -> Result<Vec<CodeEmbedding>, EmbedError> {
        codes.iter().map(|c| self.embed(c)).collect()
    }
}

/// Distance or similarity used to rank index entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    /// L2 distance, ascending.
    #[default]
    Euclidean,
    /// Cosine similarity, descending. Vectors are normalized at query time.
    Cosine,
    /// Inner product, descending.
    Dot,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cosine => "cosine",
            Metric::Dot => "dot",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Metric::Euclidean => 0,
            Metric::Cosine => 1,
            Metric::Dot => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Metric::Euclidean),
            1 => Some(Metric::Cosine),
            2 => Some(Metric::Dot),
            _ => None,
        }
    }

    /// Lower scores rank first only for distances.
    pub fn ascending(self) -> bool {
        matches!(self, Metric::Euclidean)
    }

    pub fn score(self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            Metric::Euclidean => a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = f64::from(x) - f64::from(y);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Dot => dot(a, b),
            Metric::Cosine => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                if na == 0.0 || nb == 0.0 {
                    0.0
                } else {
                    dot(a, b) / (na * nb)
                }
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine" | "cos" => Ok(Metric::Cosine),
            "dot" | "dot-product" | "inner" => Ok(Metric::Dot),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

/// Which side of a bug–fix pair is embedded as the retrieval key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeySide {
    PreFix,
    /// The fixed code; generation-time probes are correct code too.
    #[default]
    PostFix,
}

impl std::str::FromStr for KeySide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pre_fix" | "pre-fix" | "pre" => Ok(KeySide::PreFix),
            "post_fix" | "post-fix" | "post" => Ok(KeySide::PostFix),
            other => Err(format!("unknown key side `{other}`")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn euclidean_hand_value() {
        assert_eq!(Metric::Euclidean.score(&[0.0, 0.0], &[3.0, 4.0]), 5.0);
    }

    #[test]
    fn cosine_orthogonal_and_zero() {
        assert_eq!(Metric::Cosine.score(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
        assert_eq!(Metric::Cosine.score(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
        assert!((Metric::Cosine.score(&[2.0, 0.0], &[1.0, 0.0]) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn metric_parsing() {
        assert_eq!("Euclidean".parse::<Metric>().unwrap(), Metric::Euclidean);
        assert_eq!("dot".parse::<Metric>().unwrap(), Metric::Dot);
        assert!("manhattan".parse::<Metric>().is_err());
        assert_eq!(Metric::default(), Metric::Euclidean);
        assert_eq!(KeySide::default(), KeySide::PostFix);
    }
}
