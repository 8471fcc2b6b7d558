use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::Serialize;
use tagrec::backends::{BackendStats, ResponseCache};
use tagrec::corpus::{load_dataset, load_taxonomy};
use tagrec::eval::{self, evaluate_predictions, SweepAxis};
use tagrec::pipeline::{read_predictions, write_jsonl, BackendReport, RecordFailure, RunSummary};
use tagrec::retrieval::build_index;
use tagrec::sim::{recovery_experiment_with_prior, GoldRankPrior, OracleSpec};
use tagrec::{NumeralRecord, Pipeline, VectorIndex};

use crate::config::{BackendChoice, RunConfig};

pub fn embed_index(c: &RunConfig, force: bool) -> Result<()> {
    let taxonomy = RunConfig::require_file("taxonomy", &c.taxonomy)?;
    let Some(index_path) = &c.index else {
        bail!("no index path given (use --index or the config file)");
    };
    if index_path.exists() && !force {
        bail!(
            "index {} already exists; pass --force to rebuild it",
            index_path.display()
        );
    }
    let corpus = load_taxonomy(&taxonomy)?;
    let cache = c.open_cache()?;
    let embedder = c.build_embedder(&cache)?;
    let index = build_index(&corpus, embedder.as_ref(), c.embed_batch)?;
    index.save(index_path)?;
    println!(
        "indexed {} entries, dim {} -> {}",
        index.len(),
        index.dim(),
        index_path.display()
    );
    Ok(())
}

struct Loaded {
    pipeline: Pipeline,
    records: Vec<NumeralRecord>,
    cache: Option<Arc<ResponseCache>>,
}

/// Loads inputs and wires backends. Every path is checked before any
/// backend is built.
fn load(c: &RunConfig) -> Result<Loaded> {
    let taxonomy = RunConfig::require_file("taxonomy", &c.taxonomy)?;
    let dataset = RunConfig::require_file("dataset", &c.dataset)?;
    let instruction = c.instruction_text()?;
    let template = c.template()?;
    let corpus = Arc::new(load_taxonomy(&taxonomy)?);
    let records = load_dataset(&dataset, Some(&corpus))?;
    if records.is_empty() {
        bail!("dataset {} has no records", dataset.display());
    }
    let cache = c.open_cache()?;
    let embedder = c.build_embedder(&cache)?;
    let index = match &c.index {
        Some(p) if p.exists() => VectorIndex::load(p)?,
        other => {
            info!("building index over {} taxonomy entries", corpus.len());
            let index = build_index(&corpus, embedder.as_ref(), c.embed_batch)?;
            if let Some(p) = other {
                index.save(p)?;
            }
            index
        }
    };
    if let BackendChoice::Hash(dim) = c.embedder {
        if dim != index.dim() {
            bail!(
                "index has dim {} but the embedder produces {dim}; rebuild the index",
                index.dim()
            );
        }
    }
    let pipeline = Pipeline {
        corpus,
        index: Arc::new(index),
        generator: c.build_generator(&records, &cache)?,
        embedder,
        ranker: c.build_ranker(&cache)?,
        instruction,
        template,
        workers: c.workers,
    };
    pipeline.check()?;
    Ok(Loaded {
        pipeline,
        records,
        cache,
    })
}

#[derive(Serialize)]
struct CacheCounts {
    dir: PathBuf,
    hits: u64,
    misses: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool_version: &'static str,
    config: &'a RunConfig,
    seed: u64,
    backends: BackendReport,
    template_version: String,
    instruction: String,
    index_entries: usize,
    index_dim: usize,
    cache: Option<CacheCounts>,
    summary: &'a RunSummary,
    failures: &'a [RecordFailure],
}

fn manifest_path(predictions: &Path) -> PathBuf {
    let mut name = predictions
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".manifest.json");
    predictions.with_file_name(name)
}

fn network_calls(stats: &[Option<BackendStats>]) -> u64 {
    stats.iter().flatten().map(|s| s.network_calls).sum()
}

pub fn run(c: &RunConfig) -> Result<()> {
    let loaded = load(c)?;
    let out = loaded.pipeline.run(&loaded.records, &c.rerank)?;
    let predictions_path = c
        .predictions_out
        .clone()
        .unwrap_or_else(|| PathBuf::from("predictions.jsonl"));
    write_jsonl(&predictions_path, &out.predictions)?;
    if let Some(trace_path) = &c.trace_out {
        write_jsonl(trace_path, &out.traces)?;
    }
    let backends = loaded.pipeline.backend_report();
    let calls = network_calls(&[
        backends.generator_stats,
        backends.embedder_stats,
        backends.ranker_stats,
    ]);
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION"),
        config: c,
        seed: c.rerank.seed,
        backends,
        template_version: loaded.pipeline.template.version(),
        instruction: loaded.pipeline.instruction.clone(),
        index_entries: loaded.pipeline.index.len(),
        index_dim: loaded.pipeline.index.dim(),
        cache: loaded.cache.as_ref().map(|cache| CacheCounts {
            dir: cache.root().to_path_buf(),
            hits: cache.hits(),
            misses: cache.misses(),
        }),
        summary: &out.summary,
        failures: &out.failures,
    };
    let manifest_file = manifest_path(&predictions_path);
    fs::write(&manifest_file, serde_json::to_string_pretty(&manifest)?)
        .with_context(|| format!("writing {}", manifest_file.display()))?;
    if out.summary.n_failed > 0 {
        warn!(
            "{} records failed; see {}",
            out.summary.n_failed,
            manifest_file.display()
        );
    }
    println!(
        "{}",
        serde_json::json!({
            "summary": out.summary,
            "network_calls": calls,
            "predictions": predictions_path,
            "manifest": manifest_file,
        })
    );
    Ok(())
}

pub fn evaluate(predictions: &Path, dataset: &Path, out: Option<&Path>) -> Result<()> {
    let mut preds = read_predictions(predictions)?;
    if preds.is_empty() {
        bail!("predictions file {} is empty", predictions.display());
    }
    let records = load_dataset(dataset, None)?;
    let gold: HashMap<&str, Option<&String>> = records
        .iter()
        .map(|r| (r.record_id.as_str(), r.gold_tag_id.as_ref()))
        .collect();
    for p in &mut preds {
        let Some(g) = gold.get(p.record_id.as_str()) else {
            bail!("prediction for unknown record {:?}", p.record_id);
        };
        p.gold_tag_id = g.cloned();
    }
    let report = evaluate_predictions(&preds)?;
    print!("{}", report.render_text());
    println!(
        "records {}  classes {}  without gold {}  gold in top-k {:.4}",
        report.n_records, report.n_classes, report.n_skipped_no_gold, report.gold_in_top_k_rate
    );
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn sweep(
    c: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    out: Option<&Path>,
    table_out: Option<&Path>,
) -> Result<()> {
    let values = values
        .iter()
        .map(|v| axis.parse_value(v))
        .collect::<tagrec::Result<Vec<_>>>()?;
    let loaded = load(c)?;
    let table = eval::sweep(&loaded.pipeline, &loaded.records, &c.rerank, axis, &values)?;
    let text = table.render_text();
    print!("{text}");
    if let Some(path) = out {
        fs::write(path, serde_json::to_string_pretty(&table)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = table_out {
        fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    }
    if table.failed_cells() == table.cells.len() {
        bail!("every sweep cell failed");
    }
    Ok(())
}

pub fn simulate(
    c: &RunConfig,
    trials: usize,
    prior: GoldRankPrior,
    out: Option<&Path>,
) -> Result<()> {
    let BackendChoice::Oracle(spec) = &c.ranker else {
        bail!("simulate needs an oracle ranker (e.g. --ranker perfect)");
    };
    let spec = OracleSpec::new(spec.kind, spec.error_rate, c.rerank.seed)?;
    let summary = recovery_experiment_with_prior(trials, &c.rerank, &spec, prior)?;
    let json = serde_json::to_string_pretty(&summary)?;
    println!("{json}");
    if let Some(path) = out {
        fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn cache_stats(c: &RunConfig) -> Result<()> {
    let cache = ResponseCache::open(&c.cache_dir)?;
    let stats = cache.stats()?;
    println!(
        "{} entries, {} bytes in {}",
        stats.entries,
        stats.bytes,
        c.cache_dir.display()
    );
    Ok(())
}

pub fn cache_clear(c: &RunConfig) -> Result<()> {
    let cache = ResponseCache::open(&c.cache_dir)?;
    let removed = cache.clear()?;
    println!("removed {removed} entries from {}", c.cache_dir.display());
    Ok(())
}
