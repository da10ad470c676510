use std::collections::BTreeMap;
use std::sync::Arc;

use drag_core::corpus::{parse_corpus, Environment, PollutionStrategy, SourceId, DEFAULT_LEVELS};
use drag_core::retrieval::{embed, retrieve, sample_sources, Embedder, SourceIndex, EMBEDDING_DIM};
use drag_core::rng::RngKey;

fn synthetic_env() -> Environment {
    let corpus = parse_corpus(include_str!("../../../fixtures/synthetic.jsonl"), None).unwrap();
    Environment::generate(corpus, PollutionStrategy::Token, &DEFAULT_LEVELS, 3).unwrap()
}

/// Cosine by hand over the raw vectors, ranked by (-cosine, doc_id).
fn scan(index: &SourceIndex, text: &str, k: usize) -> Vec<String> {
    let q = embed(text);
    let mut all: Vec<(f64, String)> = index
        .documents()
        .iter()
        .map(|d| {
            let v = embed(&d.text);
            let dot: f64 = q
                .values()
                .iter()
                .zip(v.values())
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum();
            let norms = q.norm() * v.norm();
            (if norms == 0.0 { 0.0 } else { dot / norms }, d.doc_id.clone())
        })
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|x| x.1).collect()
}

#[test]
fn search_matches_linear_scan_on_every_source() {
    let env = synthetic_env();
    for spec in &env.sources {
        let docs = spec.documents.iter().cloned().map(Arc::new).collect();
        let index = SourceIndex::build(spec.source_id, docs, Embedder::default());
        for q in env.queries.iter().step_by(7) {
            let got: Vec<String> = retrieve(&index, q, 3)
                .unwrap()
                .into_iter()
                .map(|c| c.doc.doc_id.clone())
                .collect();
            assert_eq!(got, scan(&index, &q.text, 3), "{} {}", spec.source_id, q.query_id);
        }
    }
}

#[test]
fn toy_questions_rank_their_own_document_first() {
    let corpus = parse_corpus(include_str!("../../../fixtures/toy.jsonl"), None).unwrap();
    let docs = corpus.documents.iter().cloned().map(Arc::new).collect();
    let index = SourceIndex::build(SourceId(0), docs, Embedder::default());
    for q in &corpus.queries {
        let top = retrieve(&index, q, 1).unwrap();
        assert!(top[0].doc.origin_query_ids.contains(&q.query_id), "{}", q.query_id);
        assert!((0.0..=1.0).contains(&top[0].score_rerank));
    }
}

#[test]
fn pool_is_bounded_by_n_times_m() {
    let env = synthetic_env();
    let indexes: Vec<SourceIndex> = env
        .sources
        .iter()
        .map(|s| {
            SourceIndex::build(
                s.source_id,
                s.documents.iter().cloned().map(Arc::new).collect(),
                Embedder::default(),
            )
        })
        .collect();
    let pool: usize = indexes
        .iter()
        .take(5)
        .map(|i| retrieve(i, &env.queries[0], 3).unwrap().len())
        .sum();
    assert!(pool <= 15);
}

#[test]
fn index_survives_a_trip_through_files() {
    let env = synthetic_env();
    let docs: Vec<_> = env.sources[2].documents.iter().cloned().map(Arc::new).collect();
    let index = SourceIndex::build(SourceId(2), docs.clone(), Embedder::default());
    let dir = tempfile::tempdir().unwrap();
    let (bin, ids) = index.to_files();
    std::fs::write(dir.path().join("index.bin"), &bin).unwrap();
    std::fs::write(dir.path().join("index.ids"), &ids).unwrap();
    assert_eq!(bin.len(), docs.len() * EMBEDDING_DIM * 4);
    let back = SourceIndex::from_files(
        SourceId(2),
        &std::fs::read(dir.path().join("index.bin")).unwrap(),
        &std::fs::read_to_string(dir.path().join("index.ids")).unwrap(),
        &docs,
    )
    .unwrap();
    let q = &env.queries[10];
    assert_eq!(back.search(&embed(&q.text), 5), index.search(&embed(&q.text), 5));
}

fn frequencies(weights: &BTreeMap<SourceId, f64>, n: usize, draws: usize, seed: u64) -> BTreeMap<SourceId, f64> {
    let mut rng = RngKey::new(seed, "freq").rng();
    let mut counts: BTreeMap<SourceId, usize> = BTreeMap::new();
    for _ in 0..draws {
        for id in sample_sources(weights, n, &mut rng).unwrap() {
            *counts.entry(id).or_default() += 1;
        }
    }
    counts.into_iter().map(|(k, v)| (k, v as f64 / draws as f64)).collect()
}

#[test]
fn uniform_weights_give_uniform_selection() {
    let w: BTreeMap<SourceId, f64> = (0..6).map(|i| (SourceId(i), 10.0)).collect();
    for (_, f) in frequencies(&w, 1, 10_000, 21) {
        assert!((f - 1.0 / 6.0).abs() <= 0.02, "{f}");
    }
}

#[test]
fn dominant_weight_is_almost_always_chosen() {
    let mut w: BTreeMap<SourceId, f64> = (1..6).map(|i| (SourceId(i), 1e-6)).collect();
    w.insert(SourceId(0), 100.0);
    let f = frequencies(&w, 1, 10_000, 22);
    assert!(f[&SourceId(0)] >= 0.99);
}
