//! Retrieval correctness against an independent exhaustive-scan oracle.

use agentloop_core::registry::{
    dot, DeterministicEmbedder, Embedder, ParameterSchema, ToolDoc, ToolRegistry,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_registry(n: usize, seed: u64) -> ToolRegistry {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = ["fetch", "video", "ledger", "route", "parse", "index", "badge", "stream"];
    let mut registry = ToolRegistry::new();
    for i in 0..n {
        let description: Vec<&str> =
            (0..6).map(|_| words[rng.gen_range(0..words.len())]).collect();
        registry
            .register_tool(ToolDoc::new(
                &format!("tool_{i:05}"),
                &description.join(" "),
                ParameterSchema::default().with_property("q", "string", "query").require("q"),
            ))
            .unwrap();
    }
    registry
}

/// Independent oracle: score every entry, full sort with the same
/// tie-break (descending score, ascending name), take k.
fn brute_force_top_k(
    registry: &ToolRegistry,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
) -> Vec<(String, f64)> {
    let qv = embedder.embed(query).unwrap();
    let index = registry.index().unwrap();
    let mut scored: Vec<(String, f64)> = index
        .entries
        .iter()
        .map(|(name, v)| (name.clone(), dot(&qv, v)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

#[test]
fn search_matches_brute_force_on_1000_tools() {
    let embedder = DeterministicEmbedder::new(128, 0);
    let mut registry = synthetic_registry(1000, 42);
    registry.build_index(&embedder).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let words = ["fetch", "video", "ledger", "route", "parse", "index", "badge", "stream", "xyz"];
    for _ in 0..200 {
        let query: Vec<&str> = (0..4).map(|_| words[rng.gen_range(0..words.len())]).collect();
        let query = query.join(" ");
        let got = registry.search(&query, 5, &embedder).unwrap().ranked;
        let expected = brute_force_top_k(&registry, &embedder, &query, 5);
        assert_eq!(got, expected, "query {query:?}");
    }
}

#[test]
fn k_results_prefix_k_plus_one() {
    let embedder = DeterministicEmbedder::new(64, 1);
    let mut registry = synthetic_registry(300, 3);
    registry.build_index(&embedder).unwrap();
    for k in 1..8 {
        let smaller = registry.search("video ledger fetch", k, &embedder).unwrap().ranked;
        let larger = registry.search("video ledger fetch", k + 1, &embedder).unwrap().ranked;
        assert_eq!(smaller.as_slice(), &larger[..k.min(larger.len())]);
    }
}

#[test]
fn scores_bounded_and_self_query_exact() {
    let embedder = DeterministicEmbedder::new(128, 0);
    let mut registry = synthetic_registry(100, 9);
    registry.build_index(&embedder).unwrap();
    for doc in registry.tools().cloned().collect::<Vec<_>>() {
        let result = registry.search(&doc.canonical_text(), 1, &embedder).unwrap();
        let (name, score) = &result.ranked[0];
        assert!((score - 1.0).abs() <= 1e-6);
        // ties on identical descriptions break by name, so the winner's
        // vector must equal the queried doc's vector
        let index = registry.index().unwrap();
        let queried = index.entries.iter().find(|(n, _)| n == &doc.name).unwrap();
        let winner = index.entries.iter().find(|(n, _)| n == name).unwrap();
        assert_eq!(queried.1, winner.1);
    }
    let any = registry.search("completely unrelated words about nothing", 100, &embedder).unwrap();
    for (_, score) in &any.ranked {
        assert!((-1.0..=1.0).contains(score), "score {score} out of range");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embeddings_unit_norm(text in "[a-zA-Z0-9 ]{1,80}") {
        let embedder = DeterministicEmbedder::new(32, 5);
        let v = embedder.embed(&text).unwrap();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() <= 1e-6);
    }
}
