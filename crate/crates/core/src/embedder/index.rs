use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::{CodeEmbedding, EmbedError, EmbeddingBackend, KeySide, Metric};
use crate::corpus::Corpus;

const MAGIC: &[u8; 4] = b"MRIX";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index is empty")]
    Empty,
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("probe dimension {probe} does not match index dimension {index}")]
    DimensionMismatch { index: usize, probe: usize },
    #[error("probe backend `{probe}` does not match index backend `{index}`")]
    BackendMismatch { index: String, probe: String },
    #[error("requested zero results")]
    ZeroResults,
    #[error("duplicate index id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index file: {0}")]
    Io(#[from] io::Error),
    #[error("malformed index file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: String,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Exhaustive-scan vector index. Stored vectors are the raw backend output;
/// cosine normalizes at query time so one representation serves all metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    metric: Metric,
    backend_id: String,
    dimension: usize,
    entries: Vec<IndexEntry>,
}

impl VectorIndex {
    pub fn new(metric: Metric, backend_id: impl Into<String>, dimension: usize) -> Self {
        Self {
            metric,
            backend_id: backend_id.into(),
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, embedding: CodeEmbedding) -> Result<(), IndexError> {
        let id = id.into();
        self.check_probe(&embedding)?;
        if self.entries.iter().any(|e| e.id == id) {
            return Err(IndexError::DuplicateId(id));
        }
        self.entries.push(IndexEntry {
            id,
            values: embedding.values,
        });
        Ok(())
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Same vectors ranked under a different metric.
    pub fn with_metric(mut self, metric: Metric) -> Self {
        self.metric = metric;
        self
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn check_probe(&self, probe: &CodeEmbedding) -> Result<(), IndexError> {
        if probe.values.len() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                index: self.dimension,
                probe: probe.values.len(),
            });
        }
        if probe.backend_id != self.backend_id {
            return Err(IndexError::BackendMismatch {
                index: self.backend_id.clone(),
                probe: probe.backend_id.clone(),
            });
        }
        Ok(())
    }

    /// Top-`n` entries for `probe`: ascending distance for euclidean,
    /// descending similarity otherwise, ties broken by id.
    pub fn query(&self, probe: &CodeEmbedding, n: usize) -> Result<Vec<Hit>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroResults);
        }
        if self.entries.is_empty() {
            return Err(IndexError::Empty);
        }
        self.check_probe(probe)?;
        let mut hits: Vec<Hit> = self
            .entries
            .iter()
            .map(|e| Hit {
                id: e.id.clone(),
                score: self.metric.score(&probe.values, &e.values),
            })
            .collect();
        let ascending = self.metric.ascending();
        hits.sort_by(|a, b| {
            let by_score = if ascending {
                a.score.total_cmp(&b.score)
            } else {
                b.score.total_cmp(&a.score)
            };
            by_score.then_with(|| a.id.cmp(&b.id))
        });
        hits.truncate(n);
        Ok(hits)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, IndexError> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    /// Header: magic, version, dimension, metric, backend id; then one
    /// record per entry: id length, id bytes, `dimension` f32 values. All
    /// integers and floats little-endian.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), IndexError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&[self.metric.code()])?;
        write_str(w, &self.backend_id)?;
        for entry in &self.entries {
            write_str(w, &entry.id)?;
            for v in &entry.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, IndexError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| IndexError::Format("missing header".into()))?;
        if &magic != MAGIC {
            return Err(IndexError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(IndexError::Format(format!("unsupported version {version}")));
        }
        let dimension = read_u32(r)? as usize;
        let mut metric = [0u8; 1];
        r.read_exact(&mut metric)?;
        let metric = Metric::from_code(metric[0])
            .ok_or_else(|| IndexError::Format(format!("unknown metric code {}", metric[0])))?;
        let backend_id = read_str(r)?;
        let mut index = VectorIndex::new(metric, backend_id, dimension);
        let mut ids = HashSet::new();
        loop {
            let mut len = [0u8; 4];
            if !read_fully_or_eof(r, &mut len)? {
                break;
            }
            let mut id = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut id)
                .map_err(|_| IndexError::Format("truncated record id".into()))?;
            let id = String::from_utf8(id)
                .map_err(|_| IndexError::Format("record id is not UTF-8".into()))?;
            let mut raw = vec![0u8; dimension * 4];
            r.read_exact(&mut raw)
                .map_err(|_| IndexError::Format(format!("truncated vector for `{id}`")))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if !ids.insert(id.clone()) {
                return Err(IndexError::DuplicateId(id));
            }
            index.entries.push(IndexEntry { id, values });
        }
        Ok(index)
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, IndexError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| IndexError::Format("truncated header".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str<R: Read>(r: &mut R) -> Result<String, IndexError> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|_| IndexError::Format("truncated string".into()))?;
    String::from_utf8(buf).map_err(|_| IndexError::Format("string is not UTF-8".into()))
}

/// Reads exactly `buf.len()` bytes; `Ok(false)` on clean EOF before the
/// first byte.
fn read_fully_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool, IndexError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(IndexError::Format("truncated record header".into())),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(true)
}

/// Embeds one side of every pair. Embedding runs in parallel; entry order
/// follows the corpus.
pub fn build_index(
    corpus: &Corpus,
    key_side: KeySide,
    backend: &dyn EmbeddingBackend,
    metric: Metric,
) -> Result<VectorIndex, IndexError> {
    if corpus.is_empty() {
        return Err(IndexError::EmptyCorpus);
    }
    let keys: Vec<&str> = corpus
        .iter()
        .map(|p| match key_side {
            KeySide::PreFix => p.pre_fix_code.as_str(),
            KeySide::PostFix => p.post_fix_code.as_str(),
        })
        .collect();
    let embeddings: Vec<CodeEmbedding> = keys
        .par_chunks(64)
        .map(|chunk| backend.embed_batch(chunk))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut index = VectorIndex::new(metric, backend.id(), backend.dimension());
    index.entries = corpus
        .iter()
        .zip(embeddings)
        .map(|(pair, e)| {
            if e.values.len() != index.dimension {
                return Err(IndexError::DimensionMismatch {
                    index: index.dimension,
                    probe: e.values.len(),
                });
            }
            Ok(IndexEntry {
                id: pair.id.clone(),
                values: e.values,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::BugFixPair;
    use crate::embedder::LexicalEmbedder;

    fn toy() -> VectorIndex {
        let mut idx = VectorIndex::new(Metric::Euclidean, "toy", 2);
        for (id, v) in [("a", [0.0, 0.0]), ("b", [3.0, 4.0])] {
            idx.insert(id, CodeEmbedding { values: v.to_vec(), backend_id: "toy".into() })
                .unwrap();
        }
        idx
    }

    fn probe(v: &[f32]) -> CodeEmbedding {
        CodeEmbedding { values: v.to_vec(), backend_id: "toy".into() }
    }

    #[test]
    fn euclidean_toy_ranking() {
        let hits = toy().query(&probe(&[0.0, 0.0]), 5).unwrap();
        assert_eq!(
            hits,
            vec![Hit { id: "a".into(), score: 0.0 }, Hit { id: "b".into(), score: 5.0 }]
        );
    }

    #[test]
    fn cosine_orthogonal_ranks_last() {
        let mut idx = VectorIndex::new(Metric::Cosine, "toy", 2);
        idx.insert("orth", probe(&[0.0, 1.0])).unwrap();
        idx.insert("aligned", probe(&[2.0, 1.0])).unwrap();
        let hits = idx.query(&probe(&[1.0, 0.0]), 2).unwrap();
        assert_eq!(hits[0].id, "aligned");
        assert_eq!(hits[1], Hit { id: "orth".into(), score: 0.0 });
    }

    #[test]
    fn query_errors() {
        let idx = toy();
        assert!(matches!(idx.query(&probe(&[0.0]), 1), Err(IndexError::DimensionMismatch { .. })));
        assert!(matches!(idx.query(&probe(&[0.0, 0.0]), 0), Err(IndexError::ZeroResults)));
        let other = CodeEmbedding { values: vec![0.0, 0.0], backend_id: "x".into() };
        assert!(matches!(idx.query(&other, 1), Err(IndexError::BackendMismatch { .. })));
        let empty = VectorIndex::new(Metric::Dot, "toy", 2);
        assert!(matches!(empty.query(&probe(&[0.0, 0.0]), 1), Err(IndexError::Empty)));
    }

    #[test]
    fn file_round_trip() {
        let idx = toy().with_metric(Metric::Cosine);
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MRIX");
        let back = VectorIndex::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
        buf.pop();
        assert!(matches!(
            VectorIndex::read_from(&mut buf.as_slice()),
            Err(IndexError::Format(_))
        ));
    }

    #[test]
    fn build_over_corpus() {
        let pairs = (0..3)
            .map(|i| {
                BugFixPair::new(format!("p{i}"), "x", format!("int a = {i};\n"), format!("int a = {};\n", i + 1))
                    .unwrap()
            })
            .collect();
        let corpus = Corpus::from_pairs(pairs).unwrap();
        let e = LexicalEmbedder::default();
        let idx = build_index(&corpus, KeySide::PostFix, &e, Metric::Euclidean).unwrap();
        assert_eq!(idx.len(), 3);
        let ids: Vec<_> = idx.entries().iter().map(|e| e.id.as_str()).collect();
        assert_eq!(ids, ["p0", "p1", "p2"]);
        assert_eq!(idx, build_index(&corpus, KeySide::PostFix, &e, Metric::Euclidean).unwrap());
        assert_eq!(idx.entries()[0].values, e.embed("int a = 1;\n").unwrap().values);
        let pre = build_index(&corpus, KeySide::PreFix, &e, Metric::Euclidean).unwrap();
        assert_eq!(pre.entries()[0].values, e.embed("int a = 0;\n").unwrap().values);
    }
}
