//! End-to-end run over a dataset: generate a tag document per record,
//! retrieve its top-k candidates, re-rank them, and collect predictions.
//!
//! Records are independent and processed on a bounded worker pool. Output
//! is sorted by record id, so completion order never shows up in files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{generate, BackendStats, Embedder, Generator, Ranker};
use crate::corpus::{NumeralRecord, TaxonomyCorpus};
use crate::error::{Error, Result};
use crate::prompting::{assemble_generation_input, RerankTemplate};
use crate::rerank::{rerank_record, RankContext, RecordQuery, RerankConfig, RerankTrace};
use crate::retrieval::{retrieve, Candidate, VectorIndex};

/// One line of the predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub record_id: String,
    pub predicted_tag_id: String,
    pub gold_tag_id: Option<String>,
    pub votes: BTreeMap<String, u64>,
    pub gold_in_top_k: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Generate,
    Retrieve,
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordFailure {
    pub record_id: String,
    pub stage: Stage,
    pub message: String,
    /// Record had no generated document; counted as a skip.
    pub skipped: bool,
}

/// A record that made it through generation and retrieval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedRecord {
    pub record_id: String,
    pub gold_tag_id: Option<String>,
    pub gen_doc: String,
    pub candidates: Vec<Candidate>,
}

impl PreparedRecord {
    pub fn gold_in_top_k(&self) -> bool {
        self.gold_tag_id
            .as_deref()
            .is_some_and(|g| self.candidates.iter().any(|c| c.tag_id == g))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub n_records: usize,
    pub n_predicted: usize,
    pub n_skipped: usize,
    pub n_failed: usize,
    pub n_gold_in_top_k: usize,
    pub fallback_events: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub predictions: Vec<Prediction>,
    pub traces: Vec<RerankTrace>,
    pub failures: Vec<RecordFailure>,
    pub summary: RunSummary,
}

impl RunOutput {
    pub fn predictions_jsonl(&self) -> String {
        to_jsonl(&self.predictions)
    }

    pub fn traces_jsonl(&self) -> String {
        to_jsonl(&self.traces)
    }
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_jsonl(items)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<Prediction>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::MalformedLine {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub struct Pipeline {
    pub corpus: Arc<TaxonomyCorpus>,
    pub index: Arc<VectorIndex>,
    pub generator: Arc<dyn Generator>,
    pub embedder: Arc<dyn Embedder>,
    pub ranker: Arc<dyn Ranker>,
    pub instruction: String,
    pub template: RerankTemplate,
    /// Worker threads for record-level parallelism; 0 uses rayon's default.
    pub workers: usize,
}

impl Pipeline {
    /// Refuses an index that does not mirror the corpus.
    pub fn check(&self) -> Result<()> {
        if !self.index.matches_corpus(&self.corpus) {
            return Err(Error::Config(
                "index entries do not match the taxonomy (rebuild with embed-index)".into(),
            ));
        }
        if self.instruction.is_empty() {
            return Err(Error::Config("instruction prompt is empty".into()));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }

    fn prepare_one(
        &self,
        record: &NumeralRecord,
        top_k: usize,
    ) -> std::result::Result<PreparedRecord, RecordFailure> {
        let fail = |stage: Stage, e: Error| RecordFailure {
            record_id: record.record_id.clone(),
            stage,
            skipped: matches!(e, Error::MissingGeneration(_)),
            message: e.to_string(),
        };
        let gen_doc = assemble_generation_input(&self.instruction, record)
            .and_then(|input| generate(&input, self.generator.as_ref()))
            .map_err(|e| fail(Stage::Generate, e))?;
        let candidates = retrieve(record, &gen_doc, &self.index, self.embedder.as_ref(), top_k)
            .map_err(|e| fail(Stage::Retrieve, e))?;
        Ok(PreparedRecord {
            record_id: record.record_id.clone(),
            gold_tag_id: record.gold_tag_id.clone(),
            gen_doc,
            candidates,
        })
    }

    /// Generation and retrieval for every record, in input order.
    pub fn prepare(
        &self,
        records: &[NumeralRecord],
        top_k: usize,
    ) -> Result<Vec<std::result::Result<PreparedRecord, RecordFailure>>> {
        self.check()?;
        if top_k == 0 || top_k > self.index.len() {
            return Err(Error::KOutOfRange {
                k: top_k,
                size: self.index.len(),
            });
        }
        let pool = self.pool()?;
        Ok(pool.install(|| {
            records
                .par_iter()
                .map(|r| self.prepare_one(r, top_k))
                .collect()
        }))
    }

    /// Re-ranks prepared records. Earlier failures are carried through.
    pub fn rerank_prepared(
        &self,
        prepared: &[std::result::Result<PreparedRecord, RecordFailure>],
        config: &RerankConfig,
    ) -> Result<RunOutput> {
        config.validate()?;
        let ctx = RankContext {
            corpus: &self.corpus,
            template: &self.template,
            ranker: self.ranker.as_ref(),
        };
        let pool = self.pool()?;
        let results: Vec<std::result::Result<(Prediction, RerankTrace), RecordFailure>> = pool
            .install(|| {
                prepared
                    .par_iter()
                    .map(|p| {
                        let p = p.as_ref().map_err(Clone::clone)?;
                        if p.candidates.len() != config.top_k {
                            return Err(RecordFailure {
                                record_id: p.record_id.clone(),
                                stage: Stage::Rerank,
                                message: format!(
                                    "prepared with {} candidates, config wants top_k {}",
                                    p.candidates.len(),
                                    config.top_k
                                ),
                                skipped: false,
                            });
                        }
                        let query = RecordQuery {
                            record_id: &p.record_id,
                            gen_doc: &p.gen_doc,
                            gold_tag_id: p.gold_tag_id.as_deref(),
                        };
                        let (predicted, trace) = rerank_record(&query, &p.candidates, config, &ctx)
                            .map_err(|e| RecordFailure {
                                record_id: p.record_id.clone(),
                                stage: Stage::Rerank,
                                message: e.to_string(),
                                skipped: false,
                            })?;
                        let prediction = Prediction {
                            record_id: p.record_id.clone(),
                            predicted_tag_id: predicted,
                            gold_tag_id: p.gold_tag_id.clone(),
                            votes: trace.tally.counts.clone(),
                            gold_in_top_k: p.gold_in_top_k(),
                        };
                        Ok((prediction, trace))
                    })
                    .collect()
            });

        let mut out = RunOutput::default();
        out.summary.n_records = prepared.len();
        for result in results {
            match result {
                Ok((prediction, trace)) => {
                    out.summary.fallback_events += trace.fallback_events.len();
                    if prediction.gold_in_top_k {
                        out.summary.n_gold_in_top_k += 1;
                    }
                    out.predictions.push(prediction);
                    out.traces.push(trace);
                }
                Err(failure) => {
                    warn!(
                        "record {} failed at {:?}: {}",
                        failure.record_id, failure.stage, failure.message
                    );
                    if failure.skipped {
                        out.summary.n_skipped += 1;
                    } else {
                        out.summary.n_failed += 1;
                    }
                    out.failures.push(failure);
                }
            }
        }
        out.summary.n_predicted = out.predictions.len();
        out.predictions
            .sort_by(|a, b| a.record_id.cmp(&b.record_id));
        out.traces.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        out.failures.sort_by(|a, b| a.record_id.cmp(&b.record_id));
        Ok(out)
    }

    pub fn run(&self, records: &[NumeralRecord], config: &RerankConfig) -> Result<RunOutput> {
        config.validate()?;
        let prepared = self.prepare(records, config.top_k)?;
        self.rerank_prepared(&prepared, config)
    }

    /// Backend ids and counters, as recorded in run manifests.
    pub fn backend_report(&self) -> BackendReport {
        BackendReport {
            generator: self.generator.id(),
            embedder: self.embedder.id(),
            ranker: self.ranker.id(),
            generator_stats: self.generator.stats(),
            embedder_stats: self.embedder.stats(),
            ranker_stats: self.ranker.stats(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendReport {
    pub generator: String,
    pub embedder: String,
    pub ranker: String,
    pub generator_stats: Option<BackendStats>,
    pub embedder_stats: Option<BackendStats>,
    pub ranker_stats: Option<BackendStats>,
}
