use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{CodeEmbedding, EmbedError, EmbeddingBackend};

const BATCH: usize = 32;

/// Client for an embeddings endpoint speaking the common
/// `{"model", "input": [...]}` → `{"data": [{"embedding": [...]}]}` shape.
pub struct RemoteEmbedder {
    endpoint: String,
    model: String,
    dimension: usize,
    id: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Deserialize)]
struct Reply {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        dimension: usize,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, EmbedError> {
        let model = model.into();
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| EmbedError::Unreachable(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            id: format!("remote:{model}"),
            model,
            dimension,
            api_key,
            client,
        })
    }

    fn request(&self, codes: &[&str]) -> Result<Vec<CodeEmbedding>, EmbedError> {
        if codes.iter().any(|c| c.trim().is_empty()) {
            return Err(EmbedError::EmptyInput);
        }
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&json!({ "model": self.model, "input": codes }));
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| EmbedError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(EmbedError::Unreachable(format!("HTTP {}", resp.status())));
        }
        let reply: Reply = resp
            .json()
            .map_err(|e| EmbedError::Malformed(e.to_string()))?;
        if reply.data.len() != codes.len() {
            return Err(EmbedError::Malformed(format!(
                "expected {} embeddings, got {}",
                codes.len(),
                reply.data.len()
            )));
        }
        reply
            .data
            .into_iter()
            .map(|item| {
                if item.embedding.len() != self.dimension {
                    return Err(EmbedError::DimensionMismatch {
                        expected: self.dimension,
                        actual: item.embedding.len(),
                    });
                }
                if item.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(EmbedError::NonFinite);
                }
                Ok(CodeEmbedding {
                    values: item.embedding,
                    backend_id: self.id.clone(),
                })
            })
            .collect()
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, code: &str) -> Result<CodeEmbedding, EmbedError> {
        Ok(self.request(&[code])?.remove(0))
    }

    fn embed_batch(&self, codes: &[&str]) -> Result<Vec<CodeEmbedding>, EmbedError> {
        let mut out = Vec::with_capacity(codes.len());
        for batch in codes.chunks(BATCH) {
            out.extend(self.request(batch)?);
        }
        Ok(out)
    }
}
