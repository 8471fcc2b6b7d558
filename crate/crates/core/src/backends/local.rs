use std::collections::HashMap;

use crate::backends::{Embedder, Generator};
use crate::corpus::NumeralRecord;
use crate::error::{Error, Result};
use crate::prompting::AssembledInput;
use crate::retrieval::EmbeddingVector;

/// Bag-of-tokens embedder for offline runs.
///
/// Lowercased whitespace tokens are hashed (FNV-1a, 64-bit) into `dim`
/// buckets; bucket counts are L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("hash embedder dim must be positive".into()));
        }
        Ok(HashEmbedder { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector> {
        let mut counts = vec![0f64; self.dim];
        for token in text.split_whitespace() {
            counts[self.bucket(&token.to_lowercase())] += 1.0;
        }
        let norm = counts.iter().map(|c| c * c).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNorm {
                context: Some(format!("text {text:?}")),
            });
        }
        EmbeddingVector::new(counts.iter().map(|c| (c / norm) as f32).collect())
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl Embedder for HashEmbedder {
    fn id(&self) -> String {
        format!("hash:{}", self.dim)
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}

/// Serves generated tag documents stored alongside the dataset.
#[derive(Debug, Clone, Default)]
pub struct FileGenerator {
    docs: HashMap<String, String>,
}

impl FileGenerator {
    pub fn from_records(records: &[NumeralRecord]) -> Self {
        let docs = records
            .iter()
            .filter_map(|r| {
                r.gen_tag_doc
                    .as_ref()
                    .map(|d| (r.record_id.clone(), d.clone()))
            })
            .collect();
        FileGenerator { docs }
    }
}

impl Generator for FileGenerator {
    fn id(&self) -> String {
        "file".into()
    }

    fn generate(&self, input: &AssembledInput) -> Result<String> {
        self.docs
            .get(&input.record_id)
            .filter(|d| !d.trim().is_empty())
            .cloned()
            .ok_or_else(|| Error::MissingGeneration(input.record_id.clone()))
    }
}
