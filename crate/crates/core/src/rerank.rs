//! Multi-round tournament re-ranking with frequency voting.
//!
//! Each round the top-k candidates are randomly partitioned into groups, a
//! listwise ranker picks one winner per group, and winners collect votes.
//! After `iterations` rounds the candidate with the most votes is the
//! prediction; equal vote counts go to the better retrieval rank.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{rank_listwise, CallSite, RankRequest, Ranker};
use crate::corpus::{TagDocument, TaxonomyCorpus};
use crate::error::{Error, Result};
use crate::prompting::{build_rerank_prompt, parse_ranking_reply, RerankTemplate};
use crate::retrieval::Candidate;
use crate::seed::rng_for;

/// Intra-group presentation order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupOrdering {
    /// Sort each group by retrieval rank.
    #[default]
    OrderPreserving,
    /// Keep the random draw order.
    OrderShuffled,
}

impl GroupOrdering {
    pub fn label(self) -> &'static str {
        match self {
            GroupOrdering::OrderPreserving => "Order-Preserving",
            GroupOrdering::OrderShuffled => "Order-Shuffled",
        }
    }
}

impl FromStr for GroupOrdering {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "orderpreserving" | "preserving" | "preserve" => Ok(GroupOrdering::OrderPreserving),
            "ordershuffled" | "shuffled" | "shuffle" => Ok(GroupOrdering::OrderShuffled),
            _ => Err(Error::Config(format!("unknown ordering {s:?}"))),
        }
    }
}

impl fmt::Display for GroupOrdering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// How group winners turn into votes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoteMode {
    /// Every group winner gets a vote each round.
    #[default]
    EveryGroup,
    /// One vote per round: group winners meet in a run-off ranking call and
    /// only its winner is counted.
    RunOff,
}

impl FromStr for VoteMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "everygroup" | "all" => Ok(VoteMode::EveryGroup),
            "runoff" | "single" => Ok(VoteMode::RunOff),
            _ => Err(Error::Config(format!("unknown vote mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankConfig {
    pub top_k: usize,
    pub group_size: usize,
    pub iterations: usize,
    pub ordering: GroupOrdering,
    pub vote_mode: VoteMode,
    pub seed: u64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            top_k: 10,
            group_size: 5,
            iterations: 8,
            ordering: GroupOrdering::OrderPreserving,
            vote_mode: VoteMode::EveryGroup,
            seed: 42,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if self.group_size == 0 {
            return Err(Error::Config("group_size must be at least 1".into()));
        }
        if self.group_size > self.top_k {
            return Err(Error::Config(format!(
                "group_size {} exceeds top_k {}",
                self.group_size, self.top_k
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn groups_per_round(&self) -> usize {
        self.top_k.div_ceil(self.group_size)
    }

    pub fn votes_per_round(&self) -> usize {
        match self.vote_mode {
            VoteMode::EveryGroup => self.groups_per_round(),
            VoteMode::RunOff => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAssignment {
    pub iteration: usize,
    pub groups: Vec<Vec<Candidate>>,
}

/// Shuffles the candidates, cuts them into `ceil(n / group_size)` groups
/// (only the last may be short), then applies the intra-group ordering.
pub fn partition_into_groups<R: Rng + ?Sized>(
    candidates: &[Candidate],
    group_size: usize,
    ordering: GroupOrdering,
    iteration: usize,
    rng: &mut R,
) -> Result<GroupAssignment> {
    let drawn = draw_groups(candidates, group_size, rng)?;
    Ok(GroupAssignment {
        iteration,
        groups: apply_ordering(drawn, ordering),
    })
}

fn draw_groups<R: Rng + ?Sized>(
    candidates: &[Candidate],
    group_size: usize,
    rng: &mut R,
) -> Result<Vec<Vec<Candidate>>> {
    if group_size == 0 {
        return Err(Error::InvalidInput("group_size must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no candidates to partition".into()));
    }
    let mut drawn = candidates.to_vec();
    drawn.shuffle(rng);
    Ok(drawn
        .chunks(group_size)
        .map(<[Candidate]>::to_vec)
        .collect())
}

fn apply_ordering(mut groups: Vec<Vec<Candidate>>, ordering: GroupOrdering) -> Vec<Vec<Candidate>> {
    if ordering == GroupOrdering::OrderPreserving {
        for g in &mut groups {
            g.sort_by_key(|c| c.retrieval_rank);
        }
    }
    groups
}

fn tag_ids(groups: &[Vec<Candidate>]) -> Vec<Vec<String>> {
    groups
        .iter()
        .map(|g| g.iter().map(|c| c.tag_id.clone()).collect())
        .collect()
}

/// Everything a ranking call needs besides the group itself.
pub struct RankContext<'a> {
    pub corpus: &'a TaxonomyCorpus,
    pub template: &'a RerankTemplate,
    pub ranker: &'a dyn Ranker,
}

/// The query side of a re-ranking run.
#[derive(Debug, Clone, Copy)]
pub struct RecordQuery<'a> {
    pub record_id: &'a str,
    pub gen_doc: &'a str,
    /// Only offline oracles look at this.
    pub gold_tag_id: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupTrace {
    pub presented: Vec<String>,
    /// `None` when no backend call was needed.
    pub raw_reply: Option<String>,
    pub order: Vec<usize>,
    pub winner: String,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackEvent {
    pub round: usize,
    pub group_index: usize,
    pub reason: String,
}

/// Ranks one group and returns its winner plus the call record. An
/// unparseable reply falls back to the presented order.
pub fn rank_group(
    query: &RecordQuery<'_>,
    group: &[Candidate],
    site: CallSite<'_>,
    ctx: &RankContext<'_>,
) -> Result<(Candidate, GroupTrace)> {
    let first = group
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot rank an empty group".into()))?;
    let presented: Vec<String> = group.iter().map(|c| c.tag_id.clone()).collect();
    if group.len() == 1 {
        return Ok((
            first.clone(),
            GroupTrace {
                presented,
                raw_reply: None,
                order: vec![1],
                winner: first.tag_id.clone(),
                fallback: false,
            },
        ));
    }
    let docs: Vec<TagDocument> = group
        .iter()
        .map(|c| {
            ctx.corpus.get(&c.tag_id).cloned().ok_or_else(|| {
                Error::InvalidInput(format!("candidate {:?} is not in the taxonomy", c.tag_id))
            })
        })
        .collect::<Result<_>>()?;
    let prompt = build_rerank_prompt(ctx.template, query.gen_doc, &docs)?;
    let request = RankRequest {
        prompt: &prompt,
        gen_doc: query.gen_doc,
        group: &docs,
        gold_tag_id: query.gold_tag_id,
        site,
    };
    let raw = rank_listwise(&request, ctx.ranker)?;
    let (order, fallback) = match parse_ranking_reply(&raw, group.len()) {
        Ok(reply) => (reply.order, false),
        Err(Error::UnparseableReply(_)) => ((1..=group.len()).collect(), true),
        Err(e) => return Err(e),
    };
    let winner = group[order[0] - 1].clone();
    Ok((
        winner.clone(),
        GroupTrace {
            presented,
            raw_reply: Some(raw),
            order,
            winner: winner.tag_id,
            fallback,
        },
    ))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteTally {
    pub counts: BTreeMap<String, u64>,
    pub total_rounds: usize,
}

impl VoteTally {
    pub fn count(&self, tag_id: &str) -> u64 {
        self.counts.get(tag_id).copied().unwrap_or(0)
    }

    pub fn total_votes(&self) -> u64 {
        self.counts.values().sum()
    }
}

/// Counts how often each tag won, across all rounds.
pub fn tally_votes<S: AsRef<str>>(winners_per_iteration: &[Vec<S>]) -> Result<VoteTally> {
    if winners_per_iteration.is_empty() {
        return Err(Error::InvalidInput("no iterations to tally".into()));
    }
    let mut counts = BTreeMap::new();
    for winners in winners_per_iteration {
        for w in winners {
            *counts.entry(w.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    Ok(VoteTally {
        counts,
        total_rounds: winners_per_iteration.len(),
    })
}

/// Most-voted candidate; equal counts go to the smaller retrieval rank.
pub fn select_prediction(tally: &VoteTally, candidates: &[Candidate]) -> Result<String> {
    let rank_of: HashMap<&str, usize> = candidates
        .iter()
        .map(|c| (c.tag_id.as_str(), c.retrieval_rank))
        .collect();
    let mut best: Option<(&str, u64, usize)> = None;
    for (tag, &count) in &tally.counts {
        let rank = *rank_of
            .get(tag.as_str())
            .ok_or_else(|| Error::InconsistentTally(tag.clone()))?;
        let better = match best {
            None => true,
            Some((_, c, r)) => count > c || (count == c && rank < r),
        };
        if better {
            best = Some((tag, count, rank));
        }
    }
    best.map(|(tag, _, _)| tag.to_string())
        .ok_or_else(|| Error::InvalidInput("vote tally is empty".into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// 1-based.
    pub round: usize,
    /// Group membership in draw order.
    pub partition: Vec<Vec<String>>,
    pub groups: Vec<GroupTrace>,
    /// Present only in single-vote mode with more than one group.
    pub runoff: Option<GroupTrace>,
    pub votes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankTrace {
    pub record_id: String,
    pub gen_doc: String,
    pub config: RerankConfig,
    pub candidates: Vec<Candidate>,
    pub rounds: Vec<RoundTrace>,
    pub tally: VoteTally,
    pub predicted_tag_id: String,
    pub fallback_events: Vec<FallbackEvent>,
}

pub fn rerank_record(
    query: &RecordQuery<'_>,
    candidates: &[Candidate],
    config: &RerankConfig,
    ctx: &RankContext<'_>,
) -> Result<(String, RerankTrace)> {
    config.validate()?;
    if candidates.len() != config.top_k {
        return Err(Error::InvalidInput(format!(
            "expected {} candidates, got {}",
            config.top_k,
            candidates.len()
        )));
    }
    if query.gen_doc.trim().is_empty() {
        return Err(Error::MissingGeneration(query.record_id.to_string()));
    }
    let mut rounds = Vec::with_capacity(config.iterations);
    let mut fallback_events = Vec::new();
    let mut winners_per_round = Vec::with_capacity(config.iterations);
    let partition_label = format!("partition/{}", query.record_id);

    for round in 1..=config.iterations {
        let mut rng = rng_for(config.seed, &partition_label, &[round as u64]);
        let drawn = draw_groups(candidates, config.group_size, &mut rng)?;
        let partition = tag_ids(&drawn);
        let assignment = GroupAssignment {
            iteration: round,
            groups: apply_ordering(drawn, config.ordering),
        };

        let mut group_traces = Vec::with_capacity(assignment.groups.len());
        let mut winners = Vec::with_capacity(assignment.groups.len());
        for (group_index, group) in assignment.groups.iter().enumerate() {
            let site = CallSite {
                record_id: query.record_id,
                round,
                group_index,
            };
            let (winner, trace) = rank_group(query, group, site, ctx)?;
            if trace.fallback {
                fallback_events.push(FallbackEvent {
                    round,
                    group_index,
                    reason: "unparseable reply; kept presented order".into(),
                });
            }
            winners.push(winner);
            group_traces.push(trace);
        }

        let (votes, runoff) = match config.vote_mode {
            VoteMode::EveryGroup => (winners.iter().map(|w| w.tag_id.clone()).collect(), None),
            VoteMode::RunOff if winners.len() == 1 => (vec![winners[0].tag_id.clone()], None),
            VoteMode::RunOff => {
                let mut finalists = winners.clone();
                if config.ordering == GroupOrdering::OrderPreserving {
                    finalists.sort_by_key(|c| c.retrieval_rank);
                }
                let group_index = assignment.groups.len();
                let site = CallSite {
                    record_id: query.record_id,
                    round,
                    group_index,
                };
                let (winner, trace) = rank_group(query, &finalists, site, ctx)?;
                if trace.fallback {
                    fallback_events.push(FallbackEvent {
                        round,
                        group_index,
                        reason: "unparseable run-off reply; kept presented order".into(),
                    });
                }
                (vec![winner.tag_id], Some(trace))
            }
        };
        winners_per_round.push(votes.clone());
        rounds.push(RoundTrace {
            round,
            partition,
            groups: group_traces,
            runoff,
            votes,
        });
    }

    let tally = tally_votes(&winners_per_round)?;
    let predicted = select_prediction(&tally, candidates)?;
    let trace = RerankTrace {
        record_id: query.record_id.to_string(),
        gen_doc: query.gen_doc.to_string(),
        config: config.clone(),
        candidates: candidates.to_vec(),
        rounds,
        tally,
        predicted_tag_id: predicted.clone(),
        fallback_events,
    };
    Ok((predicted, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::format_ranking;
    use crate::sim::{OracleKind, OracleRanker, OracleSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;
    use std::sync::atomic::{AtomicUsize, Ordering};

    pub(crate) fn candidates(n: usize) -> Vec<Candidate> {
        (0..n)
            .map(|i| Candidate {
                tag_id: format!("T{i}"),
                score: 1.0 - i as f64 * 0.01,
                retrieval_rank: i + 1,
            })
            .collect()
    }

    fn corpus(n: usize) -> TaxonomyCorpus {
        TaxonomyCorpus::from_docs(
            (0..n)
                .map(|i| {
                    TagDocument::new(format!("T{i}"), format!("document {i} words{i}")).unwrap()
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_by_five_gives_two_disjoint_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = partition_into_groups(
            &candidates(10),
            5,
            GroupOrdering::OrderPreserving,
            1,
            &mut rng,
        )
        .unwrap();
        assert_eq!(a.groups.len(), 2);
        assert!(a.groups.iter().all(|g| g.len() == 5));
        let ids: HashSet<_> = a
            .groups
            .iter()
            .flatten()
            .map(|c| c.tag_id.clone())
            .collect();
        assert_eq!(ids.len(), 10);
    }

    #[test]
    fn non_dividing_group_size_leaves_short_last_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = partition_into_groups(
            &candidates(10),
            3,
            GroupOrdering::OrderShuffled,
            1,
            &mut rng,
        )
        .unwrap();
        let sizes: Vec<_> = a.groups.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }

    #[test]
    fn order_preserving_groups_are_rank_sorted() {
        let c = candidates(10);
        for seed in 0..1000 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a =
                partition_into_groups(&c, 5, GroupOrdering::OrderPreserving, 1, &mut rng).unwrap();
            for g in &a.groups {
                assert!(g
                    .windows(2)
                    .all(|w| w[0].retrieval_rank < w[1].retrieval_rank));
            }
        }
    }

    #[test]
    fn partition_rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(partition_into_groups(
            &candidates(3),
            0,
            GroupOrdering::OrderPreserving,
            1,
            &mut rng
        )
        .is_err());
        assert!(
            partition_into_groups(&[], 2, GroupOrdering::OrderPreserving, 1, &mut rng).is_err()
        );
    }

    #[test]
    fn tally_examples() {
        let t = tally_votes(&[vec!["A", "B"], vec!["A", "C"], vec!["A", "B"]]).unwrap();
        assert_eq!((t.count("A"), t.count("B"), t.count("C")), (3, 2, 1));
        assert_eq!(t.total_rounds, 3);
        let t = tally_votes(&[vec!["A", "B"]]).unwrap();
        assert_eq!((t.count("A"), t.count("B")), (1, 1));
        assert!(tally_votes::<&str>(&[]).is_err());
    }

    fn tally(pairs: &[(&str, u64)]) -> VoteTally {
        VoteTally {
            counts: pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            total_rounds: 1,
        }
    }

    fn cands(ids: &[(&str, usize)]) -> Vec<Candidate> {
        ids.iter()
            .map(|(id, r)| Candidate {
                tag_id: id.to_string(),
                score: 0.0,
                retrieval_rank: *r,
            })
            .collect()
    }

    #[test]
    fn select_prediction_examples() {
        let c = cands(&[("A", 1), ("B", 3)]);
        assert_eq!(
            select_prediction(&tally(&[("A", 3), ("B", 1)]), &c).unwrap(),
            "A"
        );
        assert_eq!(
            select_prediction(&tally(&[("A", 2), ("B", 2)]), &c).unwrap(),
            "A"
        );
        let c2 = cands(&[("B", 1), ("A", 3)]);
        assert_eq!(
            select_prediction(&tally(&[("A", 2), ("B", 2)]), &c2).unwrap(),
            "B"
        );
        assert!(matches!(
            select_prediction(&tally(&[("Z", 1)]), &c),
            Err(Error::InconsistentTally(_))
        ));
        assert!(select_prediction(&tally(&[]), &c).is_err());
    }

    struct Counting {
        calls: AtomicUsize,
        reply: String,
    }
    impl Ranker for Counting {
        fn id(&self) -> String {
            "counting".into()
        }
        fn rank(&self, _r: &RankRequest<'_>) -> Result<String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.reply.clone())
        }
    }

    fn query<'a>(gold: Option<&'a str>) -> RecordQuery<'a> {
        RecordQuery {
            record_id: "r1",
            gen_doc: "generated",
            gold_tag_id: gold,
        }
    }

    fn site() -> CallSite<'static> {
        CallSite {
            record_id: "r1",
            round: 1,
            group_index: 0,
        }
    }

    #[test]
    fn singleton_group_needs_no_call() {
        let corpus = corpus(3);
        let template = RerankTemplate::default();
        let ranker = Counting {
            calls: AtomicUsize::new(0),
            reply: "[1]".into(),
        };
        let ctx = RankContext {
            corpus: &corpus,
            template: &template,
            ranker: &ranker,
        };
        let group = &candidates(3)[2..];
        let (w, t) = rank_group(&query(None), group, site(), &ctx).unwrap();
        assert_eq!(w.tag_id, "T2");
        assert!(t.raw_reply.is_none());
        assert_eq!(ranker.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn identity_echo_picks_first_presented() {
        let corpus = corpus(5);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::IdentityEcho, None, 0).unwrap());
        let ctx = RankContext {
            corpus: &corpus,
            template: &template,
            ranker: &ranker,
        };
        let mut group = candidates(5);
        group.reverse();
        let (w, _) = rank_group(&query(None), &group, site(), &ctx).unwrap();
        assert_eq!(w.tag_id, "T4");
    }

    #[test]
    fn perfect_oracle_picks_gold() {
        let corpus = corpus(5);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Perfect, None, 0).unwrap());
        let ctx = RankContext {
            corpus: &corpus,
            template: &template,
            ranker: &ranker,
        };
        let (w, t) = rank_group(&query(Some("T3")), &candidates(5), site(), &ctx).unwrap();
        assert_eq!(w.tag_id, "T3");
        assert_eq!(
            t.raw_reply.as_deref(),
            Some(format_ranking(&[4, 1, 2, 3, 5]).as_str())
        );
    }

    #[test]
    fn unparseable_reply_falls_back_to_presented_order() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = Counting {
            calls: AtomicUsize::new(0),
            reply: "I cannot rank these.".into(),
        };
        let ctx = RankContext {
            corpus: &corpus,
            template: &template,
            ranker: &ranker,
        };
        let (w, t) = rank_group(&query(None), &candidates(3), site(), &ctx).unwrap();
        assert_eq!(w.tag_id, "T0");
        assert!(t.fallback);

        let config = RerankConfig {
            iterations: 3,
            ..RerankConfig::default()
        };
        let (_, trace) = rerank_record(&query(None), &candidates(10), &config, &ctx).unwrap();
        assert_eq!(trace.fallback_events.len(), 6);
    }

    struct Broken;
    impl Ranker for Broken {
        fn id(&self) -> String {
            "broken".into()
        }
        fn rank(&self, _r: &RankRequest<'_>) -> Result<String> {
            Err(Error::RetriesExhausted {
                backend: "broken".into(),
                attempts: 3,
                last_error: "HTTP 503".into(),
            })
        }
    }

    #[test]
    fn transport_failure_propagates() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ctx = RankContext {
            corpus: &corpus,
            template: &template,
            ranker: &Broken,
        };
        let r = rerank_record(
            &query(None),
            &candidates(10),
            &RerankConfig::default(),
            &ctx,
        );
        assert!(matches!(r, Err(Error::RetriesExhausted { .. })));
    }

    fn oracle_ctx<'a>(
        corpus: &'a TaxonomyCorpus,
        template: &'a RerankTemplate,
        ranker: &'a OracleRanker,
    ) -> RankContext<'a> {
        RankContext {
            corpus,
            template,
            ranker,
        }
    }

    #[test]
    fn perfect_oracle_gold_gets_every_round() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Perfect, None, 0).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        for seed in 0..50 {
            let config = RerankConfig {
                seed,
                ..RerankConfig::default()
            };
            let (_, trace) =
                rerank_record(&query(Some("T6")), &candidates(10), &config, &ctx).unwrap();
            assert_eq!(trace.tally.count("T6"), 8);
            assert_eq!(trace.tally.total_votes(), 16);
        }
    }

    #[test]
    fn single_group_reduces_to_one_listwise_call() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Lexical, None, 0).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        let config = RerankConfig {
            iterations: 1,
            group_size: 10,
            ..RerankConfig::default()
        };
        let q = RecordQuery {
            record_id: "r",
            gen_doc: "words7 document",
            gold_tag_id: None,
        };
        let (pred, trace) = rerank_record(&q, &candidates(10), &config, &ctx).unwrap();
        assert_eq!(trace.rounds.len(), 1);
        assert_eq!(trace.rounds[0].groups.len(), 1);
        let g = &trace.rounds[0].groups[0];
        assert_eq!(pred, g.presented[g.order[0] - 1]);
        assert_eq!(pred, "T7");
    }

    #[test]
    fn vote_modes_coincide_for_single_group() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Noisy, Some(0.4), 3).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        for seed in 0..20 {
            let base = RerankConfig {
                group_size: 10,
                iterations: 5,
                seed,
                ..RerankConfig::default()
            };
            let single = RerankConfig {
                vote_mode: VoteMode::RunOff,
                ..base.clone()
            };
            let (a, ta) = rerank_record(&query(Some("T4")), &candidates(10), &base, &ctx).unwrap();
            let (b, tb) =
                rerank_record(&query(Some("T4")), &candidates(10), &single, &ctx).unwrap();
            assert_eq!(a, b);
            assert_eq!(ta.tally, tb.tally);
        }
    }

    #[test]
    fn single_vote_mode_counts_one_per_round() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Perfect, None, 0).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        let config = RerankConfig {
            vote_mode: VoteMode::RunOff,
            ..RerankConfig::default()
        };
        let (pred, trace) =
            rerank_record(&query(Some("T9")), &candidates(10), &config, &ctx).unwrap();
        assert_eq!(pred, "T9");
        assert_eq!(trace.tally.total_votes(), 8);
        assert_eq!(trace.tally.count("T9"), 8);
        assert!(trace.rounds.iter().all(|r| r.runoff.is_some()));
    }

    #[test]
    fn trace_is_deterministic() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::Noisy, Some(0.3), 11).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        let config = RerankConfig {
            ordering: GroupOrdering::OrderShuffled,
            ..RerankConfig::default()
        };
        let run = || {
            let (_, t) = rerank_record(&query(Some("T2")), &candidates(10), &config, &ctx).unwrap();
            serde_json::to_string(&t).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn config_validation() {
        assert!(RerankConfig::default().validate().is_ok());
        let bad = RerankConfig {
            group_size: 11,
            ..RerankConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = RerankConfig {
            iterations: 0,
            ..RerankConfig::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(
            RerankConfig {
                group_size: 3,
                ..RerankConfig::default()
            }
            .groups_per_round(),
            4
        );
    }

    #[test]
    fn candidate_count_must_match_top_k() {
        let corpus = corpus(10);
        let template = RerankTemplate::default();
        let ranker = OracleRanker::new(OracleSpec::new(OracleKind::IdentityEcho, None, 0).unwrap());
        let ctx = oracle_ctx(&corpus, &template, &ranker);
        assert!(
            rerank_record(&query(None), &candidates(9), &RerankConfig::default(), &ctx).is_err()
        );
    }

    #[test]
    fn parses_enum_names() {
        assert_eq!(
            "order-shuffled".parse::<GroupOrdering>().unwrap(),
            GroupOrdering::OrderShuffled
        );
        assert_eq!(
            "OrderPreserving".parse::<GroupOrdering>().unwrap(),
            GroupOrdering::OrderPreserving
        );
        assert_eq!("run-off".parse::<VoteMode>().unwrap(), VoteMode::RunOff);
        assert_eq!(
            "EveryGroup".parse::<VoteMode>().unwrap(),
            VoteMode::EveryGroup
        );
        assert!("sideways".parse::<GroupOrdering>().is_err());
    }
}
