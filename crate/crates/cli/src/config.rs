//! Run configuration: a JSON file with defaults for every key, overridden
//! by command-line flags.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tagrec::backends::{
    Embedder, FileGenerator, Generator, HashEmbedder, Ranker, RemoteEmbedder, RemoteGenerator,
    RemoteRanker, RemoteSpec, ResponseCache,
};
use tagrec::prompting::{RerankTemplate, DEFAULT_INSTRUCTION};
use tagrec::rerank::RerankConfig;
use tagrec::sim::{OracleRanker, OracleSpec};
use tagrec::NumeralRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub taxonomy: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub predictions_out: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub generator: BackendChoice,
    pub embedder: BackendChoice,
    pub ranker: BackendChoice,
    /// Chat-completion service used by `remote` generator and ranker.
    pub chat_service: RemoteSpec,
    /// Embedding service used by the `remote` embedder.
    pub embedding_service: RemoteSpec,
    pub rerank: RerankConfig,
    /// Inline instruction text; wins over `instruction_path`.
    pub instruction: Option<String>,
    pub instruction_path: Option<PathBuf>,
    pub rerank_template_path: Option<PathBuf>,
    /// Record-level worker threads; 0 picks one per core.
    pub workers: usize,
    pub embed_batch: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            taxonomy: None,
            dataset: None,
            index: None,
            cache_dir: PathBuf::from(".tagrec-cache"),
            predictions_out: None,
            trace_out: None,
            generator: BackendChoice::File,
            embedder: BackendChoice::Hash(256),
            ranker: BackendChoice::Remote,
            chat_service: RemoteSpec::default(),
            embedding_service: RemoteSpec {
                name: "embed".into(),
                model_id: "text-embedding-3-small".into(),
                ..RemoteSpec::default()
            },
            rerank: RerankConfig::default(),
            instruction: None,
            instruction_path: None,
            rerank_template_path: None,
            workers: 0,
            embed_batch: tagrec::retrieval::DEFAULT_EMBED_BATCH,
        }
    }
}

/// Backend spec string: `file`, `remote`, `hash:<dim>`, or an oracle such
/// as `perfect`, `noisy:0.1`, `lexical`, `position-biased[:p]`, `identity`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendChoice {
    File,
    Remote,
    Hash(usize),
    Oracle(OracleSpec),
}

impl FromStr for BackendChoice {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "file" => return Ok(Self::File),
            "remote" => return Ok(Self::Remote),
            _ => {}
        }
        if let Some(dim) = s.strip_prefix("hash:") {
            let dim = dim
                .parse()
                .with_context(|| format!("bad hash dim in {s:?}"))?;
            return Ok(Self::Hash(dim));
        }
        if s == "hash" {
            return Ok(Self::Hash(256));
        }
        let spec: OracleSpec = s
            .parse()
            .with_context(|| format!("unknown backend {s:?}"))?;
        Ok(Self::Oracle(spec))
    }
}

impl TryFrom<String> for BackendChoice {
    type Error = anyhow::Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BackendChoice> for String {
    fn from(b: BackendChoice) -> String {
        match b {
            BackendChoice::File => "file".into(),
            BackendChoice::Remote => "remote".into(),
            BackendChoice::Hash(d) => format!("hash:{d}"),
            BackendChoice::Oracle(spec) => spec.to_string(),
        }
    }
}

impl BackendChoice {
    pub fn is_remote(&self) -> bool {
        matches!(self, Self::Remote)
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn uses_remote(&self) -> bool {
        self.generator.is_remote() || self.embedder.is_remote() || self.ranker.is_remote()
    }

    pub fn require_file(what: &str, path: &Option<PathBuf>) -> Result<PathBuf> {
        let Some(path) = path else {
            bail!("no {what} path given (use --{what} or the config file)");
        };
        if !path.is_file() {
            bail!("{what} file {} does not exist", path.display());
        }
        Ok(path.clone())
    }

    pub fn instruction_text(&self) -> Result<String> {
        if let Some(text) = &self.instruction {
            return Ok(text.clone());
        }
        match &self.instruction_path {
            Some(p) => fs::read_to_string(p)
                .with_context(|| format!("reading instruction {}", p.display())),
            None => Ok(DEFAULT_INSTRUCTION.to_string()),
        }
    }

    pub fn template(&self) -> Result<RerankTemplate> {
        match &self.rerank_template_path {
            Some(p) => Ok(RerankTemplate::from_file(p)?),
            None => Ok(RerankTemplate::default()),
        }
    }

    pub fn open_cache(&self) -> Result<Option<Arc<ResponseCache>>> {
        if !self.uses_remote() {
            return Ok(None);
        }
        Ok(Some(Arc::new(ResponseCache::open(&self.cache_dir)?)))
    }

    pub fn build_embedder(&self, cache: &Option<Arc<ResponseCache>>) -> Result<Arc<dyn Embedder>> {
        Ok(match &self.embedder {
            BackendChoice::Hash(dim) => Arc::new(HashEmbedder::new(*dim)?),
            BackendChoice::Remote => Arc::new(RemoteEmbedder::new(
                self.embedding_service.clone(),
                cache.clone(),
            )),
            other => bail!("{} cannot embed", String::from(other.clone())),
        })
    }

    pub fn build_generator(
        &self,
        records: &[NumeralRecord],
        cache: &Option<Arc<ResponseCache>>,
    ) -> Result<Arc<dyn Generator>> {
        Ok(match &self.generator {
            BackendChoice::File => Arc::new(FileGenerator::from_records(records)),
            BackendChoice::Remote => Arc::new(RemoteGenerator::new(
                self.chat_service.clone(),
                cache.clone(),
            )),
            other => bail!("{} cannot generate", String::from(other.clone())),
        })
    }

    pub fn build_ranker(&self, cache: &Option<Arc<ResponseCache>>) -> Result<Arc<dyn Ranker>> {
        Ok(match &self.ranker {
            BackendChoice::Remote => {
                Arc::new(RemoteRanker::new(self.chat_service.clone(), cache.clone()))
            }
            BackendChoice::Oracle(spec) => {
                let spec = OracleSpec::new(spec.kind, spec.error_rate, self.rerank.seed)?;
                Arc::new(OracleRanker::new(spec))
            }
            other => bail!("{} cannot rank", String::from(other.clone())),
        })
    }
}
