//! Embedding index over the taxonomy and exhaustive cosine top-k search.
//!
//! Index file layout, all integers little-endian:
//!
//! ```text
//! u32 dim | u32 count | count × ( u32 id_len | id bytes (UTF-8) | dim × f32 )
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{embed_batch, Embedder};
use crate::corpus::{NumeralRecord, TaxonomyCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("embedding has dimension 0".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: None });
        }
        Ok(EmbeddingVector { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, c: f32) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * c).collect())
    }
}

impl TryFrom<Vec<f32>> for EmbeddingVector {
    type Error = Error;
    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f32> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum()
}

fn cosine_with_norms(a: &[f32], a_norm: f64, b: &[f32], b_norm: f64) -> f64 {
    // Adding 0.0 folds -0.0 into 0.0 so orthogonal entries tie under total_cmp.
    dot(a, b) / (a_norm * b_norm) + 0.0
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm { context: None });
    }
    Ok(cosine_with_norms(a.values(), na, b.values(), nb))
}

/// A retrieved tag with its cosine score and 1-based retrieval rank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub tag_id: String,
    pub score: f64,
    pub retrieval_rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    norms: Vec<f64>,
}

impl VectorIndex {
    pub fn new(entries: Vec<(String, EmbeddingVector)>) -> Result<Self> {
        let dim = entries
            .first()
            .map(|(_, v)| v.dim())
            .ok_or_else(|| Error::InvalidInput("vector index is empty".into()))?;
        let mut seen = HashSet::with_capacity(entries.len());
        let mut ids = Vec::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len());
        let mut norms = Vec::with_capacity(entries.len());
        for (id, v) in entries {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.dim(),
                });
            }
            if !seen.insert(id.clone()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate tag_id {id:?} in index"
                )));
            }
            let norm = v.norm();
            if norm == 0.0 {
                return Err(Error::ZeroNorm { context: Some(id) });
            }
            ids.push(id);
            vectors.push(v);
            norms.push(norm);
        }
        Ok(VectorIndex {
            dim,
            ids,
            vectors,
            norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    /// True when the index holds exactly the corpus ids in corpus order.
    pub fn matches_corpus(&self, corpus: &TaxonomyCorpus) -> bool {
        self.ids.len() == corpus.len()
            && self
                .ids
                .iter()
                .zip(corpus.docs())
                .all(|(a, d)| *a == d.tag_id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + self.len() * (4 + 16 + 4 * self.dim));
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (id, v) in self.entries() {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for x in v.values() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut reader = ByteReader { bytes, pos: 0 };
        let dim = reader.u32()? as usize;
        let count = reader.u32()? as usize;
        if dim == 0 {
            return Err(Error::MalformedIndex("dimension is 0".into()));
        }
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = reader.u32()? as usize;
            let id = std::str::from_utf8(reader.take(id_len)?)
                .map_err(|e| Error::MalformedIndex(format!("tag id is not UTF-8: {e}")))?
                .to_string();
            let mut values = Vec::with_capacity(dim);
            for chunk in reader.take(dim * 4)?.chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().expect("4-byte chunk")));
            }
            let v = EmbeddingVector::new(values)
                .map_err(|e| Error::MalformedIndex(format!("entry {id:?}: {e}")))?;
            entries.push((id, v));
        }
        if reader.pos != bytes.len() {
            return Err(Error::MalformedIndex(format!(
                "{} trailing bytes",
                bytes.len() - reader.pos
            )));
        }
        Self::new(entries).map_err(|e| Error::MalformedIndex(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::MalformedIndex("truncated file".into()))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}

pub const DEFAULT_EMBED_BATCH: usize = 64;

/// Embeds every corpus document, in corpus order. Batches run concurrently.
pub fn build_index(
    corpus: &TaxonomyCorpus,
    embedder: &dyn Embedder,
    batch_size: usize,
) -> Result<VectorIndex> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("cannot index an empty corpus".into()));
    }
    let docs = corpus.docs();
    let batches: Vec<Vec<EmbeddingVector>> = docs
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let texts: Vec<&str> = chunk.iter().map(|d| d.text.as_str()).collect();
            embed_batch(&texts, embedder).map_err(|e| Error::EmbedTag {
                tag_id: chunk[0].tag_id.clone(),
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let dim = batches[0][0].dim();
    let mut entries = Vec::with_capacity(docs.len());
    for (doc, v) in docs.iter().zip(batches.into_iter().flatten()) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        entries.push((doc.tag_id.clone(), v));
    }
    VectorIndex::new(entries)
}

/// Score descending, then corpus position ascending.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `k` entries most cosine-similar to `query`. Equal scores keep corpus
/// order.
pub fn top_k(query: &EmbeddingVector, index: &VectorIndex, k: usize) -> Result<Vec<Candidate>> {
    if k == 0 || k > index.len() {
        return Err(Error::KOutOfRange {
            k,
            size: index.len(),
        });
    }
    if query.dim() != index.dim {
        return Err(Error::DimensionMismatch {
            expected: index.dim,
            actual: query.dim(),
        });
    }
    let q_norm = query.norm();
    if q_norm == 0.0 {
        return Err(Error::ZeroNorm {
            context: Some("query".into()),
        });
    }
    let mut scored: Vec<(f64, usize)> = index
        .vectors
        .iter()
        .zip(&index.norms)
        .enumerate()
        .map(|(i, (v, &n))| (cosine_with_norms(query.values(), q_norm, v.values(), n), i))
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(scored
        .into_iter()
        .enumerate()
        .map(|(rank, (score, i))| Candidate {
            tag_id: index.ids[i].clone(),
            score,
            retrieval_rank: rank + 1,
        })
        .collect())
}

/// Embeds the generated document for `record` and returns its top-k.
pub fn retrieve(
    record: &NumeralRecord,
    gen_doc: &str,
    index: &VectorIndex,
    embedder: &dyn Embedder,
    k: usize,
) -> Result<Vec<Candidate>> {
    if gen_doc.trim().is_empty() {
        return Err(Error::MissingGeneration(record.record_id.clone()));
    }
    let query = embed_batch(&[gen_doc], embedder)?.remove(0);
    top_k(&query, index, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::HashEmbedder;
    use crate::corpus::TagDocument;
    use proptest::prelude::*;
    use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};

    fn v(values: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new(values.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(
            cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(),
            0.0
        );
        assert!((cosine_similarity(&v(&[2.0, 2.0]), &v(&[1.0, 1.0])).unwrap() - 1.0).abs() < 1e-12);
        let s = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
        assert!((s - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(Error::ZeroNorm { .. })
        ));
        assert!(EmbeddingVector::new(vec![f32::NAN]).is_err());
    }

    fn index(rows: &[&[f32]]) -> VectorIndex {
        VectorIndex::new(
            rows.iter()
                .enumerate()
                .map(|(i, r)| (format!("T{i}"), v(r)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn colinear_entry_is_top_1() {
        let idx = index(&[&[1.0, 0.0, 0.0], &[0.0, 3.0, 3.0], &[0.5, 0.5, 0.0]]);
        let top = top_k(&v(&[0.0, 1.0, 1.0]), &idx, 1).unwrap();
        assert_eq!(top[0].tag_id, "T1");
        assert!((top[0].score - 1.0).abs() < 1e-12);
        assert_eq!(top[0].retrieval_rank, 1);
    }

    #[test]
    fn equal_scores_keep_corpus_order() {
        let idx = index(&[&[0.0, 1.0], &[1.0, 0.0], &[2.0, 0.0]]);
        let top = top_k(&v(&[1.0, 0.0]), &idx, 3).unwrap();
        let ids: Vec<_> = top.iter().map(|c| c.tag_id.as_str()).collect();
        assert_eq!(ids, ["T1", "T2", "T0"]);
        assert_eq!(top[0].score, top[1].score);
    }

    #[test]
    fn k_and_dim_are_checked() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(matches!(
            top_k(&v(&[1.0, 0.0]), &idx, 0),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            top_k(&v(&[1.0, 0.0]), &idx, 3),
            Err(Error::KOutOfRange { .. })
        ));
        assert!(matches!(
            top_k(&v(&[1.0, 0.0, 0.0]), &idx, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    fn corpus(texts: &[&str]) -> TaxonomyCorpus {
        TaxonomyCorpus::from_docs(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| TagDocument::new(format!("T{i}"), *t).unwrap())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn build_index_preserves_order_and_persists() {
        let c = corpus(&["revenue from sales", "cost of goods", "net income"]);
        let e = HashEmbedder::new(16).unwrap();
        let idx = build_index(&c, &e, 2).unwrap();
        assert_eq!(idx.len(), 3);
        assert!(idx.matches_corpus(&c));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.bin");
        idx.save(&path).unwrap();
        let loaded = VectorIndex::load(&path).unwrap();
        assert_eq!(loaded, idx);
        assert_eq!(loaded.to_bytes(), idx.to_bytes());
    }

    #[test]
    fn index_bytes_follow_layout() {
        let idx = VectorIndex::new(vec![("ab".into(), v(&[1.0, -2.0]))]).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(idx.to_bytes(), expected);
    }

    #[test]
    fn malformed_index_bytes_rejected() {
        let idx = index(&[&[1.0, 0.0]]);
        let bytes = idx.to_bytes();
        assert!(VectorIndex::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(VectorIndex::from_bytes(&extra).is_err());
        assert!(VectorIndex::from_bytes(&[]).is_err());
    }

    struct Alternating(AtomicUsize);
    impl Embedder for Alternating {
        fn id(&self) -> String {
            "alt".into()
        }
        fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
            let call = self.0.fetch_add(1, AtomicOrdering::SeqCst);
            let dim = if call == 0 { 8 } else { 16 };
            Ok(texts.iter().map(|_| v(&vec![1.0; dim])).collect())
        }
    }

    #[test]
    fn dim_disagreement_across_batches() {
        let c = corpus(&["a", "b", "c"]);
        let e = Alternating(AtomicUsize::new(0));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let result = pool.install(|| build_index(&c, &e, 1));
        assert!(matches!(result, Err(Error::DimensionMismatch { .. })));
    }

    struct Failing;
    impl Embedder for Failing {
        fn id(&self) -> String {
            "failing".into()
        }
        fn embed(&self, _texts: &[&str]) -> Result<Vec<EmbeddingVector>> {
            Err(Error::backend("failing", "boom"))
        }
    }

    #[test]
    fn backend_failure_carries_tag_context() {
        let c = corpus(&["a"]);
        match build_index(&c, &Failing, 4) {
            Err(Error::EmbedTag { tag_id, .. }) => assert_eq!(tag_id, "T0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn retrieve_self_similarity() {
        let texts = [
            "revenue from contracts with customers",
            "goodwill impairment",
            "lease liability current",
        ];
        let c = corpus(&texts);
        let e = HashEmbedder::new(64).unwrap();
        let idx = build_index(&c, &e, 8).unwrap();
        let rec = NumeralRecord {
            record_id: "r".into(),
            report_text: "x 1".into(),
            numeral: "1".into(),
            question: "q".into(),
            gold_tag_id: None,
            gen_tag_doc: None,
        };
        let top = retrieve(&rec, texts[1], &idx, &e, 1).unwrap();
        assert_eq!(top[0].tag_id, "T1");
        assert!((top[0].score - 1.0).abs() < 1e-6);
        assert!(retrieve(&rec, "  ", &idx, &e, 1).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            pair in (1usize..16).prop_flat_map(|d| (
                proptest::collection::vec(-1.0f32..1.0, d),
                proptest::collection::vec(-1.0f32..1.0, d),
            )),
            c in 0.01f32..100.0,
        ) {
            let (a, b) = pair;
            prop_assume!(a.iter().any(|x| *x != 0.0) && b.iter().any(|x| *x != 0.0));
            let (a, b) = (v(&a), v(&b));
            let ab = cosine_similarity(&a, &b).unwrap();
            prop_assert!((ab - cosine_similarity(&b, &a).unwrap()).abs() < 1e-9);
            let scaled = a.scaled(c).unwrap();
            prop_assert!((ab - cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-6);
            prop_assert!(ab.abs() <= 1.0 + 1e-9);
        }

        #[test]
        fn full_ranking_is_consistent_with_pairwise_order(
            rows in (1usize..6).prop_flat_map(|d| proptest::collection::vec(
                proptest::collection::vec(-2i8..3, d), 1..30)),
        ) {
            let rows: Vec<Vec<f32>> = rows.into_iter()
                .filter(|r| r.iter().any(|x| *x != 0))
                .map(|r| r.into_iter().map(f32::from).collect())
                .collect();
            prop_assume!(!rows.is_empty());
            let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
            let idx = index(&refs);
            let query = rows[0].clone();
            let all = top_k(&v(&query), &idx, idx.len()).unwrap();
            for w in all.windows(2) {
                let pos = |c: &Candidate| c.tag_id[1..].parse::<usize>().unwrap();
                prop_assert!(w[0].score > w[1].score
                    || (w[0].score == w[1].score && pos(&w[0]) < pos(&w[1])));
                prop_assert_eq!(w[0].retrieval_rank + 1, w[1].retrieval_rank);
            }
        }
    }
}
