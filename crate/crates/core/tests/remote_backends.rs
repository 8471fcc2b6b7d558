mod common;

use std::sync::Arc;

use tagrec::backends::{
    embed_batch, generate, rank_listwise, CallSite, Embedder, Generator, RankRequest, Ranker,
    RemoteEmbedder, RemoteGenerator, RemoteRanker, ResponseCache,
};
use tagrec::corpus::TagDocument;
use tagrec::prompting::{build_rerank_prompt, parse_ranking_reply, AssembledInput, RerankTemplate};
use tagrec::Error;

use common::{MockServer, MOCK_DIM};

fn group() -> Vec<TagDocument> {
    ["net income loss", "revenues", "operating expenses"]
        .iter()
        .enumerate()
        .map(|(i, t)| TagDocument::new(format!("T{i}"), *t).unwrap())
        .collect()
}

fn rank(ranker: &dyn Ranker, docs: &[TagDocument]) -> tagrec::Result<String> {
    let prompt = build_rerank_prompt(&RerankTemplate::default(), "total revenues", docs)?;
    rank_listwise(
        &RankRequest {
            prompt: &prompt,
            gen_doc: "total revenues",
            group: docs,
            gold_tag_id: None,
            site: CallSite {
                record_id: "r1",
                round: 1,
                group_index: 0,
            },
        },
        ranker,
    )
}

#[test]
fn ranker_reply_parses_to_a_permutation() {
    let server = MockServer::start();
    let ranker = RemoteRanker::new(server.spec("mockrank", "m"), None);
    let docs = group();
    let reply = rank(&ranker, &docs).unwrap();
    let parsed = parse_ranking_reply(&reply, docs.len()).unwrap();
    assert!(!parsed.repaired);
    assert_eq!(server.calls(), 1);
    assert_eq!(ranker.id(), "remote:mockrank:m");
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start();
    server.fail_next(&[500, 429]);
    let ranker = RemoteRanker::new(server.spec("mockretry", "m"), None);
    assert!(rank(&ranker, &group()).is_ok());
    assert_eq!(server.calls(), 3);
    assert_eq!(ranker.stats().unwrap().network_calls, 3);
}

#[test]
fn retries_run_out() {
    let server = MockServer::start();
    server.fail_next(&[503, 503, 503]);
    let ranker = RemoteRanker::new(server.spec("mockexhaust", "m"), None);
    match rank(&ranker, &group()) {
        Err(Error::RetriesExhausted { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected exhausted retries, got {other:?}"),
    }
    assert_eq!(server.calls(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let server = MockServer::start();
    server.fail_next(&[401]);
    let ranker = RemoteRanker::new(server.spec("mockauth", "m"), None);
    assert!(matches!(
        rank(&ranker, &group()),
        Err(Error::Auth { status: 401, .. })
    ));
    assert_eq!(server.calls(), 1);
}

#[test]
fn client_errors_fail_fast() {
    let server = MockServer::start();
    server.fail_next(&[400]);
    let ranker = RemoteRanker::new(server.spec("mockbad", "m"), None);
    assert!(matches!(
        rank(&ranker, &group()),
        Err(Error::Backend { .. })
    ));
    assert_eq!(server.calls(), 1);
}

#[test]
fn api_key_comes_from_the_environment() {
    let server = MockServer::start();
    let spec = server.spec("mock-key", "m");
    assert_eq!(spec.api_key_var(), "TAGREC_MOCK_KEY_API_KEY");
    std::env::set_var(spec.api_key_var(), "sk-test");
    let ranker = RemoteRanker::new(spec, None);
    rank(&ranker, &group()).unwrap();
    assert_eq!(server.last_auth().as_deref(), Some("Bearer sk-test"));
}

#[test]
fn cache_answers_repeat_requests() {
    let server = MockServer::start();
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
    let ranker = RemoteRanker::new(server.spec("mockcache", "m"), Some(cache.clone()));
    let first = rank(&ranker, &group()).unwrap();
    let second = rank(&ranker, &group()).unwrap();
    assert_eq!(first, second);
    assert_eq!(server.calls(), 1);
    let stats = ranker.stats().unwrap();
    assert_eq!(
        (stats.requests, stats.cache_hits, stats.network_calls),
        (2, 1, 1)
    );
    assert_eq!(cache.stats().unwrap().entries, 1);

    // A different model is a different request.
    let other = RemoteRanker::new(server.spec("mockcache", "m2"), Some(cache.clone()));
    rank(&other, &group()).unwrap();
    assert_eq!(server.calls(), 2);
}

#[test]
fn failed_calls_are_not_cached() {
    let server = MockServer::start();
    server.fail_next(&[401]);
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
    let ranker = RemoteRanker::new(server.spec("mocknocache", "m"), Some(cache.clone()));
    assert!(rank(&ranker, &group()).is_err());
    assert_eq!(cache.stats().unwrap().entries, 0);
    assert!(rank(&ranker, &group()).is_ok());
}

#[test]
fn embedder_returns_one_vector_per_text() {
    let server = MockServer::start();
    let dir = tempfile::tempdir().unwrap();
    let cache = Arc::new(ResponseCache::open(dir.path()).unwrap());
    let embedder = RemoteEmbedder::new(server.spec("mockembed", "e"), Some(cache));
    let vectors = embed_batch(&["alpha beta", "gamma"], &embedder).unwrap();
    assert_eq!(vectors.len(), 2);
    assert!(vectors.iter().all(|v| v.dim() == MOCK_DIM));
    let again = embedder.embed(&["alpha beta", "gamma"]).unwrap();
    assert_eq!(again, vectors);
    assert_eq!(server.calls(), 1);
    assert!(embed_batch(&["ok", " "], &embedder).is_err());
}

#[test]
fn generator_returns_reply_text() {
    let server = MockServer::start();
    let generator = RemoteGenerator::new(server.spec("mockgen", "g"), None);
    let input = AssembledInput {
        record_id: "r1".into(),
        text: "instruction\nreport\nWhat is 5?".into(),
    };
    assert_eq!(
        generate(&input, &generator).unwrap(),
        "generated: What is 5?"
    );
    assert_eq!(generator.stats().unwrap().network_calls, 1);
}
