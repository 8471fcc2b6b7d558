//! Offline oracle rankers and Monte-Carlo recovery experiments.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backends::{RankRequest, Ranker};
use crate::corpus::{TagDocument, TaxonomyCorpus};
use crate::error::{Error, Result};
use crate::prompting::{format_ranking, RerankTemplate};
use crate::rerank::{rerank_record, RankContext, RecordQuery, RerankConfig};
use crate::retrieval::Candidate;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OracleKind {
    /// Gold first, the rest in presented order.
    Perfect,
    /// Perfect, but with probability `error_rate` the top slot is swapped
    /// with a uniformly chosen other slot.
    Noisy,
    /// Descending token overlap with the generated document.
    Lexical,
    /// Presented order with probability `error_rate` (default 1), otherwise
    /// Perfect. Models primacy bias.
    PositionBiased,
    /// Presented order.
    IdentityEcho,
}

impl FromStr for OracleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "perfect" => Ok(OracleKind::Perfect),
            "noisy" => Ok(OracleKind::Noisy),
            "lexical" => Ok(OracleKind::Lexical),
            "positionbiased" | "position" | "primacy" => Ok(OracleKind::PositionBiased),
            "identityecho" | "identity" | "echo" => Ok(OracleKind::IdentityEcho),
            _ => Err(Error::Config(format!("unknown oracle kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawOracleSpec")]
pub struct OracleSpec {
    pub kind: OracleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Deserialize)]
struct RawOracleSpec {
    kind: OracleKind,
    #[serde(default)]
    error_rate: Option<f64>,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<RawOracleSpec> for OracleSpec {
    type Error = Error;
    fn try_from(raw: RawOracleSpec) -> Result<Self> {
        OracleSpec::new(raw.kind, raw.error_rate, raw.seed)
    }
}

impl OracleSpec {
    /// `error_rate` is required for `Noisy`, optional for `PositionBiased`
    /// and rejected otherwise.
    pub fn new(kind: OracleKind, error_rate: Option<f64>, seed: u64) -> Result<Self> {
        match (kind, error_rate) {
            (OracleKind::Noisy, None) => {
                return Err(Error::Config("noisy oracle needs an error rate".into()))
            }
            (OracleKind::Noisy | OracleKind::PositionBiased, Some(p))
                if !(0.0..=1.0).contains(&p) =>
            {
                return Err(Error::Config(format!("error rate {p} outside [0, 1]")))
            }
            (OracleKind::Noisy | OracleKind::PositionBiased, _) => {}
            (_, Some(_)) => {
                return Err(Error::Config(format!(
                    "{kind:?} oracle takes no error rate"
                )))
            }
            (_, None) => {}
        }
        Ok(OracleSpec {
            kind,
            error_rate,
            seed,
        })
    }

    fn needs_gold(&self) -> bool {
        match self.kind {
            OracleKind::Perfect | OracleKind::Noisy => true,
            OracleKind::PositionBiased => self.error_rate.is_some_and(|p| p < 1.0),
            OracleKind::Lexical | OracleKind::IdentityEcho => false,
        }
    }
}

impl fmt::Display for OracleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            OracleKind::Perfect => "perfect",
            OracleKind::Noisy => "noisy",
            OracleKind::Lexical => "lexical",
            OracleKind::PositionBiased => "position-biased",
            OracleKind::IdentityEcho => "identity",
        };
        match self.error_rate {
            Some(p) => write!(f, "{name}:{p}"),
            None => f.write_str(name),
        }
    }
}

/// Parses `kind[:error_rate]`, e.g. `perfect`, `noisy:0.1`.
impl FromStr for OracleSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rate) = match s.split_once(':') {
            Some((k, r)) => {
                let rate = r
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad error rate in {s:?}")))?;
                (k, Some(rate))
            }
            None => (s, None),
        };
        OracleSpec::new(kind.parse()?, rate, 0)
    }
}

fn tokens(text: &str) -> HashSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Permutation (1-based presented positions) an oracle would reply with.
///
/// `rng` is only consumed by the noisy kinds. They always draw the same
/// number of values, so equal seeds couple runs at different error rates.
pub fn oracle_rank<R: Rng + ?Sized>(
    spec: &OracleSpec,
    gen_doc: &str,
    group: &[(&str, &str)],
    gold_tag_id: Option<&str>,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if group.is_empty() {
        return Err(Error::InvalidInput(
            "oracle asked to rank an empty group".into(),
        ));
    }
    if spec.needs_gold() && gold_tag_id.is_none() {
        return Err(Error::InvalidInput(format!(
            "{spec} oracle needs the gold tag"
        )));
    }
    let n = group.len();
    let presented: Vec<usize> = (1..=n).collect();
    let perfect = || {
        let gold_pos = gold_tag_id.and_then(|g| group.iter().position(|(id, _)| *id == g));
        match gold_pos {
            Some(p) => std::iter::once(p + 1)
                .chain(presented.iter().copied().filter(|&i| i != p + 1))
                .collect(),
            None => presented.clone(),
        }
    };
    let order = match spec.kind {
        OracleKind::Perfect => perfect(),
        OracleKind::IdentityEcho => presented.clone(),
        OracleKind::Noisy => {
            let mut order: Vec<usize> = perfect();
            let u: f64 = rng.gen();
            if n > 1 {
                let other = rng.gen_range(1..n);
                if u < spec.error_rate.unwrap_or(0.0) {
                    order.swap(0, other);
                }
            }
            order
        }
        OracleKind::PositionBiased => {
            let u: f64 = rng.gen();
            if u < spec.error_rate.unwrap_or(1.0) {
                presented.clone()
            } else {
                perfect()
            }
        }
        OracleKind::Lexical => {
            let query = tokens(gen_doc);
            let mut scored: Vec<(usize, usize)> = group
                .iter()
                .enumerate()
                .map(|(i, (_, text))| (i + 1, tokens(text).intersection(&query).count()))
                .collect();
            scored.sort_by_key(|&(_, overlap)| std::cmp::Reverse(overlap));
            scored.into_iter().map(|(i, _)| i).collect()
        }
    };
    Ok(order)
}

/// [`Ranker`] backed by an oracle. Random draws are keyed by the call site,
/// so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct OracleRanker {
    spec: OracleSpec,
}

impl OracleRanker {
    pub fn new(spec: OracleSpec) -> Self {
        OracleRanker { spec }
    }

    pub fn spec(&self) -> &OracleSpec {
        &self.spec
    }
}

impl Ranker for OracleRanker {
    fn id(&self) -> String {
        format!("oracle:{}", self.spec)
    }

    fn rank(&self, request: &RankRequest<'_>) -> Result<String> {
        let group: Vec<(&str, &str)> = request
            .group
            .iter()
            .map(|d| (d.tag_id.as_str(), d.text.as_str()))
            .collect();
        let label = format!("oracle/{}", request.site.record_id);
        let mut rng: ChaCha8Rng = rng_for(
            self.spec.seed,
            &label,
            &[request.site.round as u64, request.site.group_index as u64],
        );
        let order = oracle_rank(
            &self.spec,
            request.gen_doc,
            &group,
            request.gold_tag_id,
            &mut rng,
        )?;
        Ok(format_ranking(&order))
    }
}

/// Where the gold tag sits in synthetic retrieval lists.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GoldRankPrior {
    /// Every rank 1..=k equally likely.
    #[default]
    Uniform,
    /// P(rank r) proportional to 1/r, so retrieval order carries signal.
    Zipf,
}

impl FromStr for GoldRankPrior {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(GoldRankPrior::Uniform),
            "zipf" => Ok(GoldRankPrior::Zipf),
            _ => Err(Error::Config(format!("unknown gold-rank prior {s:?}"))),
        }
    }
}

impl GoldRankPrior {
    fn draw<R: Rng + ?Sized>(self, k: usize, rng: &mut R) -> usize {
        match self {
            GoldRankPrior::Uniform => rng.gen_range(1..=k),
            GoldRankPrior::Zipf => {
                let total: f64 = (1..=k).map(|r| 1.0 / r as f64).sum();
                let mut u = rng.gen::<f64>() * total;
                for r in 1..=k {
                    u -= 1.0 / r as f64;
                    if u < 0.0 {
                        return r;
                    }
                }
                k
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoverySummary {
    pub oracle: OracleSpec,
    pub config: RerankConfig,
    pub gold_prior: GoldRankPrior,
    pub n_trials: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
    pub mean_gold_votes: f64,
    pub fallback_events: usize,
}

/// Per-trial outcome, exposed for tests that check invariants trial by trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialOutcome {
    pub gold_tag_id: String,
    pub gold_rank: usize,
    pub predicted_tag_id: String,
    pub gold_votes: u64,
    pub total_votes: u64,
    pub fallback_events: usize,
}

/// Synthetic taxonomy of `k` candidates `c001..` whose texts share three
/// tokens and differ in two.
fn synthetic_corpus(k: usize) -> TaxonomyCorpus {
    let docs = (1..=k)
        .map(|i| TagDocument {
            tag_id: format!("c{i:03}"),
            text: format!("candidate tag document d{i} topic{i}"),
        })
        .collect();
    TaxonomyCorpus::from_docs(docs).expect("synthetic ids are unique")
}

fn synthetic_candidates(corpus: &TaxonomyCorpus) -> Vec<Candidate> {
    corpus
        .docs()
        .iter()
        .enumerate()
        .map(|(i, d)| Candidate {
            tag_id: d.tag_id.clone(),
            score: 1.0 - i as f64 / (corpus.len() as f64 + 1.0),
            retrieval_rank: i + 1,
        })
        .collect()
}

/// Runs `n_trials` synthetic records through [`rerank_record`] with an oracle
/// ranker. Trial `i` uses record id `trial-i`; its gold rank is drawn from
/// `config.seed`, so runs that differ only in `iterations`, `ordering` or the
/// oracle see the same gold positions and partitions.
pub fn run_trials(
    n_trials: usize,
    config: &RerankConfig,
    spec: &OracleSpec,
    prior: GoldRankPrior,
) -> Result<Vec<TrialOutcome>> {
    if n_trials == 0 {
        return Err(Error::InvalidInput("n_trials must be at least 1".into()));
    }
    config.validate()?;
    let corpus = synthetic_corpus(config.top_k);
    let candidates = synthetic_candidates(&corpus);
    let template = RerankTemplate::default();
    let ranker = OracleRanker::new(spec.clone());
    let ctx = RankContext {
        corpus: &corpus,
        template: &template,
        ranker: &ranker,
    };
    (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng: ChaCha8Rng = rng_for(config.seed, "gold-rank", &[trial as u64]);
            let gold_rank = prior.draw(config.top_k, &mut rng);
            let gold = &corpus.docs()[gold_rank - 1];
            let record_id = format!("trial-{trial}");
            let query = RecordQuery {
                record_id: &record_id,
                gen_doc: &gold.text,
                gold_tag_id: Some(&gold.tag_id),
            };
            let (predicted, trace) = rerank_record(&query, &candidates, config, &ctx)?;
            Ok(TrialOutcome {
                gold_tag_id: gold.tag_id.clone(),
                gold_rank,
                predicted_tag_id: predicted,
                gold_votes: trace.tally.count(&gold.tag_id),
                total_votes: trace.tally.total_votes(),
                fallback_events: trace.fallback_events.len(),
            })
        })
        .collect()
}

pub fn recovery_experiment_with_prior(
    n_trials: usize,
    config: &RerankConfig,
    spec: &OracleSpec,
    prior: GoldRankPrior,
) -> Result<RecoverySummary> {
    let outcomes = run_trials(n_trials, config, spec, prior)?;
    let recovered = outcomes
        .iter()
        .filter(|o| o.predicted_tag_id == o.gold_tag_id)
        .count();
    let gold_votes: u64 = outcomes.iter().map(|o| o.gold_votes).sum();
    Ok(RecoverySummary {
        oracle: spec.clone(),
        config: config.clone(),
        gold_prior: prior,
        n_trials,
        recovered,
        recovery_rate: recovered as f64 / n_trials as f64,
        mean_gold_votes: gold_votes as f64 / n_trials as f64,
        fallback_events: outcomes.iter().map(|o| o.fallback_events).sum(),
    })
}

/// Gold-recovery rate with gold rank uniform over `1..=top_k`.
pub fn recovery_experiment(
    n_trials: usize,
    config: &RerankConfig,
    spec: &OracleSpec,
) -> Result<RecoverySummary> {
    recovery_experiment_with_prior(n_trials, config, spec, GoldRankPrior::Uniform)
}
