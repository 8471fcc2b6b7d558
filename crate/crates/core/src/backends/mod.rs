//! Pluggable generator, embedder and listwise-ranker backends.
//!
//! Every backend is `Send + Sync`; the pipeline calls them from a worker
//! pool. Remote backends consult a [`ResponseCache`] before touching the
//! network.

mod cache;
mod local;
mod remote;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::{CacheEntry, CacheKey, CacheStats, ResponseCache};
pub use local::{FileGenerator, HashEmbedder};
pub use remote::{
    RateLimit, RemoteEmbedder, RemoteGenerator, RemoteRanker, RemoteSpec, RetryPolicy,
};

use crate::corpus::TagDocument;
use crate::error::{Error, Result};
use crate::prompting::AssembledInput;
use crate::retrieval::EmbeddingVector;

/// Where a ranking call sits inside a pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CallSite<'a> {
    pub record_id: &'a str,
    pub round: usize,
    /// Group index within the round; the run-off among group winners uses
    /// the index one past the last group.
    pub group_index: usize,
}

/// A listwise ranking request.
///
/// Remote rankers only look at `prompt`. The structured fields let offline
/// oracles answer without parsing the prompt back.
#[derive(Debug, Clone, Copy)]
pub struct RankRequest<'a> {
    pub prompt: &'a str,
    pub gen_doc: &'a str,
    pub group: &'a [TagDocument],
    pub gold_tag_id: Option<&'a str>,
    pub site: CallSite<'a>,
}

/// Request/response counters for a backend.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendStats {
    pub requests: u64,
    pub cache_hits: u64,
    pub network_calls: u64,
}

pub trait Generator: Send + Sync {
    fn id(&self) -> String;
    fn generate(&self, input: &AssembledInput) -> Result<String>;
    fn stats(&self) -> Option<BackendStats> {
        None
    }
}

pub trait Embedder: Send + Sync {
    fn id(&self) -> String;
    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>>;
    fn stats(&self) -> Option<BackendStats> {
        None
    }
}

pub trait Ranker: Send + Sync {
    fn id(&self) -> String;
    /// Returns the backend's verbatim reply.
    fn rank(&self, request: &RankRequest<'_>) -> Result<String>;
    fn stats(&self) -> Option<BackendStats> {
        None
    }
}

pub fn generate(input: &AssembledInput, backend: &dyn Generator) -> Result<String> {
    let text = backend.generate(input)?;
    if text.trim().is_empty() {
        return Err(Error::MissingGeneration(input.record_id.clone()));
    }
    Ok(text)
}

/// Embeds `texts` and checks the batch contract: one finite vector per
/// text, all of one dimension.
pub fn embed_batch(texts: &[&str], backend: &dyn Embedder) -> Result<Vec<EmbeddingVector>> {
    if texts.is_empty() {
        return Err(Error::InvalidInput("embedding batch is empty".into()));
    }
    if let Some(pos) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(Error::InvalidInput(format!(
            "embedding input {pos} is empty"
        )));
    }
    let vectors = backend.embed(texts)?;
    if vectors.len() != texts.len() {
        return Err(Error::backend(
            backend.id(),
            format!(
                "returned {} vectors for {} inputs",
                vectors.len(),
                texts.len()
            ),
        ));
    }
    let dim = vectors[0].dim();
    if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: v.dim(),
        });
    }
    Ok(vectors)
}

pub fn rank_listwise(request: &RankRequest<'_>, backend: &dyn Ranker) -> Result<String> {
    if request.prompt.is_empty() {
        return Err(Error::InvalidInput("ranking prompt is empty".into()));
    }
    backend.rank(request)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RequestKind {
    Generate,
    Embed,
    Rank,
}

/// Logical backend request; its canonical bytes define the cache key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub kind: RequestKind,
    pub payload: String,
    pub model_id: String,
    pub params: Vec<(String, String)>,
}

impl BackendRequest {
    pub fn new(kind: RequestKind, model_id: impl Into<String>, payload: impl Into<String>) -> Self {
        BackendRequest {
            kind,
            payload: payload.into(),
            model_id: model_id.into(),
            params: Vec::new(),
        }
    }

    pub fn param(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.params.push((key.into(), value.to_string()));
        self
    }

    /// Params are sorted by key so insertion order never changes the key.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut params = self.params.clone();
        params.sort();
        serde_json::to_vec(&serde_json::json!({
            "kind": self.kind,
            "model_id": self.model_id,
            "params": params,
            "payload": self.payload,
        }))
        .expect("request serializes")
    }

    pub fn cache_key(&self) -> CacheKey {
        let digest = Sha256::digest(self.canonical_bytes());
        CacheKey::from_hex(&hex::encode(digest)).expect("sha256 hex is a valid key")
    }
}
