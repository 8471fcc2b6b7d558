mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tagrec::rerank::{GroupOrdering, VoteMode};
use tagrec::sim::GoldRankPrior;
use tagrec::SweepAxis;

use crate::config::{BackendChoice, RunConfig};

#[derive(Parser)]
#[command(
    name = "tagrec",
    version,
    about = "Recommend XBRL tags for financial numerals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed every taxonomy entry and write the vector index.
    EmbedIndex {
        #[command(flatten)]
        common: CommonArgs,
        /// Overwrite an existing index file.
        #[arg(long)]
        force: bool,
    },
    /// Generate, retrieve and re-rank every record of a dataset.
    Run {
        #[command(flatten)]
        common: CommonArgs,
        /// Predictions file (JSON lines); a manifest is written beside it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a predictions file against dataset gold tags.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the report as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run re-ranking once per value of one parameter.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        axis: SweepAxis,
        /// Comma-separated values, e.g. `2,4,8` or `order-preserving,order-shuffled`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Machine-readable table (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Aligned text table.
        #[arg(long)]
        table_out: Option<PathBuf>,
    },
    /// Monte-Carlo gold recovery with a simulated ranker.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value = "uniform")]
        gold_prior: GoldRankPrior,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect or empty the response cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Count cached responses and their size
    Stats {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Delete every cached response
    Clear {
        #[command(flatten)]
        common: CommonArgs,
    },
}

/// Flags shared by the pipeline subcommands. Each one overrides the
/// matching key of the config file.
#[derive(Args, Default)]
struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    ordering: Option<GroupOrdering>,
    #[arg(long)]
    vote_mode: Option<VoteMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// `remote` or an oracle: perfect, noisy:<p>, lexical, position-biased[:p], identity.
    #[arg(long)]
    ranker: Option<BackendChoice>,
    /// `hash:<dim>` or `remote`.
    #[arg(long)]
    embedder: Option<BackendChoice>,
    /// `file` (stored documents) or `remote`.
    #[arg(long)]
    generator: Option<BackendChoice>,
    /// Per-record re-ranking traces (JSON lines).
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($flag:expr => $($field:tt)+) => {
                if let Some(v) = $flag {
                    c.$($field)+ = v;
                }
            };
        }
        if self.taxonomy.is_some() {
            c.taxonomy = self.taxonomy;
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset;
        }
        if self.index.is_some() {
            c.index = self.index;
        }
        if self.trace_out.is_some() {
            c.trace_out = self.trace_out;
        }
        set!(self.cache_dir => cache_dir);
        set!(self.top_k => rerank.top_k);
        set!(self.group_size => rerank.group_size);
        set!(self.iterations => rerank.iterations);
        set!(self.ordering => rerank.ordering);
        set!(self.vote_mode => rerank.vote_mode);
        set!(self.seed => rerank.seed);
        set!(self.ranker => ranker);
        set!(self.embedder => embedder);
        set!(self.generator => generator);
        set!(self.workers => workers);
        c.rerank.validate()?;
        Ok(c)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::EmbedIndex { common, force } => common
            .resolve()
            .and_then(|c| commands::embed_index(&c, force)),
        Command::Run { common, out } => common.resolve().and_then(|mut c| {
            if out.is_some() {
                c.predictions_out = out;
            }
            commands::run(&c)
        }),
        Command::Evaluate {
            predictions,
            dataset,
            out,
        } => commands::evaluate(&predictions, &dataset, out.as_deref()),
        Command::Sweep {
            common,
            axis,
            values,
            out,
            table_out,
        } => common
            .resolve()
            .and_then(|c| commands::sweep(&c, axis, &values, out.as_deref(), table_out.as_deref())),
        Command::Simulate {
            common,
            trials,
            gold_prior,
            out,
        } => common
            .resolve()
            .and_then(|c| commands::simulate(&c, trials, gold_prior, out.as_deref())),
        Command::Cache { action } => match action {
            CacheAction::Stats { common } => {
                common.resolve().and_then(|c| commands::cache_stats(&c))
            }
            CacheAction::Clear { common } => {
                common.resolve().and_then(|c| commands::cache_clear(&c))
            }
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render_error(&e));
            ExitCode::FAILURE
        }
    }
}

/// Joins the error chain, skipping causes already quoted by their parent.
fn render_error(e: &anyhow::Error) -> String {
    let mut out = e.to_string();
    let mut last = out.clone();
    for cause in e.chain().skip(1) {
        let text = cause.to_string();
        if !last.contains(&text) {
            out.push_str(": ");
            out.push_str(&text);
        }
        last = text;
    }
    out
}
