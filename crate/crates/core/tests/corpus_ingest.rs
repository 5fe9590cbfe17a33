use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use forge_core::corpus::{compute_stats, read_corpus, write_corpus};
use forge_core::ingest::{LinkGraph, expand_url_frontier, load_manifest};
use forge_core::{DataClass, Document};
use proptest::prelude::*;
use std::collections::HashMap;

#[test]
fn bundled_seed_manifest_totals() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/manifests/seed_sources.json");
    let reg = load_manifest(&path).unwrap();
    assert_eq!(reg.len(), 61);
    let total: u64 = [DataClass::AgentDoc, DataClass::AgentTraj, DataClass::Code, DataClass::Text]
        .into_iter()
        .map(|c| reg.declared_tokens(c))
        .sum();
    assert_eq!(total, 10_593_000_000);
    assert!(reg.iter().all(|s| s.origin.starts_with("http")));
}

fn class_strategy() -> impl Strategy<Value = DataClass> {
    prop_oneof![Just(DataClass::AgentDoc), Just(DataClass::AgentTraj), Just(DataClass::Code), Just(DataClass::Text)]
}

fn docs_strategy() -> impl Strategy<Value = Vec<Document>> {
    prop::collection::vec((class_strategy(), "\\PC{0,40}", prop::option::of("[a-z]{1,6}")), 0..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (class, text, meta))| {
                let d = Document::new(format!("doc-{i:03}"), "src", class, text);
                match meta {
                    Some(m) => d.with_meta("tag", m),
                    None => d,
                }
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corpus_round_trips_through_shards(docs in docs_strategy(), max_docs in 1usize..8) {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("c");
        write_corpus(&sub.join("c"), &docs, max_docs).unwrap();
        let back = if docs.is_empty() { Vec::new() } else { read_corpus(&sub).unwrap() };
        prop_assert_eq!(back, docs);
    }

    #[test]
    fn stats_ignore_order_and_add_up(docs in docs_strategy()) {
        let stats = compute_stats(&docs).unwrap();
        let mut reversed = docs.clone();
        reversed.reverse();
        prop_assert_eq!(&compute_stats(&reversed).unwrap(), &stats);
        let total: u64 = docs.iter().map(|d| d.token_count).sum();
        prop_assert_eq!(stats.total_tokens(), total);
        prop_assert_eq!(stats.total_docs(), docs.len() as u64);
        let (a, b) = docs.split_at(docs.len() / 2);
        let mut merged = compute_stats(a).unwrap();
        merged.merge(&compute_stats(b).unwrap());
        prop_assert_eq!(merged, stats);
    }

    #[test]
    fn frontier_levels_are_bfs_distances(edges in prop::collection::vec((0usize..15, 0usize..15), 0..40), levels in 1usize..6) {
        let url = |i: usize| format!("https://site{i}.example/page");
        let mut graph = LinkGraph::new();
        for (a, b) in &edges {
            graph.entry(url(*a)).or_default().push(url(*b));
        }
        let seeds = vec![url(0), url(1)];
        let got = expand_url_frontier(&seeds, &graph, levels).unwrap();

        let mut dist: HashMap<String, usize> = HashMap::new();
        let mut queue = VecDeque::new();
        for s in &seeds {
            dist.insert(s.clone(), 0);
            queue.push_back(s.clone());
        }
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in graph.get(&u).into_iter().flatten() {
                if !dist.contains_key(v) {
                    dist.insert(v.clone(), d + 1);
                    queue.push_back(v.clone());
                }
            }
        }
        let mut want: Vec<BTreeSet<String>> = vec![BTreeSet::new(); levels];
        for (u, d) in dist {
            if d < levels {
                want[d].insert(u);
            }
        }
        while want.last().is_some_and(BTreeSet::is_empty) {
            want.pop();
        }
        prop_assert_eq!(got.levels, want);
        prop_assert_eq!(got.rejected, 0);
    }
}
