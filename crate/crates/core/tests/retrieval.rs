use std::cmp::Ordering;

use forge_core::embed::{EmbedderConfig, EmbeddingVector, cosine_similarity, embed_text};
use forge_core::retrieve::{RetrievalHit, prune_redundant, read_hits, retrieve_top_k, write_hits};
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dot product carried in double-double precision.
fn dd_dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut hi, mut lo) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let p = x * y;
        let pe = x.mul_add(*y, -p);
        let s = hi + p;
        let bb = s - hi;
        let se = (hi - (s - bb)) + (p - bb);
        hi = s;
        lo += se + pe;
    }
    hi + lo
}

fn oracle_cosine(a: &[f64], b: &[f64]) -> f64 {
    dd_dot(a, b) / (dd_dot(a, a).sqrt() * dd_dot(b, b).sqrt())
}

fn random_set(n: usize, dims: usize, prefix: &str, rng: &mut ChaCha8Rng) -> IndexMap<String, EmbeddingVector> {
    (0..n)
        .map(|i| {
            let v = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("{prefix}{i:04}"), EmbeddingVector::new(v))
        })
        .collect()
}

fn brute_force(
    seeds: &IndexMap<String, EmbeddingVector>,
    cands: &IndexMap<String, EmbeddingVector>,
    k: usize,
) -> Vec<(String, String, f64)> {
    let mut all = Vec::new();
    for (cid, cv) in cands {
        let mut best: Option<(String, f64)> = None;
        for (sid, sv) in seeds {
            let s = oracle_cosine(cv.values(), sv.values());
            let better = match &best {
                None => true,
                Some((bid, bs)) => s > *bs || (s == *bs && sid < bid),
            };
            if better {
                best = Some((sid.clone(), s));
            }
        }
        let (sid, s) = best.unwrap();
        all.push((cid.clone(), sid, s));
    }
    all.sort_by(|a, b| match b.2.partial_cmp(&a.2).unwrap() {
        Ordering::Equal => a.0.cmp(&b.0),
        o => o,
    });
    all.truncate(k);
    all
}

#[test]
fn top_k_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let seeds = random_set(30, 64, "s", &mut rng);
    let cands = random_set(400, 64, "c", &mut rng);
    let got = retrieve_top_k(&seeds, &cands, 40).unwrap();
    let want = brute_force(&seeds, &cands, 40);
    assert_eq!(got.len(), want.len());
    for (g, (cid, sid, s)) in got.iter().zip(&want) {
        assert_eq!(&g.candidate_id, cid);
        assert_eq!(&g.best_seed_id, sid);
        assert!((g.score - s).abs() < 1e-12);
    }
}

#[test]
fn prune_is_sound_and_complete() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let base = random_set(40, 8, "b", &mut rng);
    // near copies of the base set force removals
    let mut all = base.clone();
    for (id, v) in &base {
        let w = v.values().iter().map(|x| x + rng.random_range(-0.05..0.05)).collect();
        all.insert(format!("{id}-copy"), EmbeddingVector::new(w));
    }
    let thr = 0.95;
    let report = prune_redundant(&all, thr).unwrap();
    assert!(!report.removed_pairs.is_empty());
    for (i, a) in report.retained_ids.iter().enumerate() {
        for b in &report.retained_ids[i + 1..] {
            assert!(oracle_cosine(all[a].values(), all[b].values()) < thr, "{a} {b}");
        }
    }
    for pair in &report.removed_pairs {
        assert!(report.retained_ids.contains(&pair.kept_id));
        let s = oracle_cosine(all[&pair.kept_id].values(), all[&pair.removed_id].values());
        assert!(s >= thr - 1e-12);
        assert!((s - pair.similarity).abs() < 1e-12);
    }
    assert_eq!(report.retained_ids.len() + report.removed_pairs.len(), all.len());
}

#[test]
fn hits_survive_a_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let seeds = random_set(5, 16, "s", &mut rng);
    let cands = random_set(50, 16, "c", &mut rng);
    let hits: Vec<RetrievalHit> = retrieve_top_k(&seeds, &cands, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("hits.jsonl");
    write_hits(&path, &hits).unwrap();
    assert_eq!(read_hits(&path).unwrap(), hits);
}

fn vec_strategy(dims: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dims)
}

proptest! {
    #[test]
    fn cosine_is_symmetric_and_scale_free(a in vec_strategy(12), b in vec_strategy(12), s in 0.01f64..100.0) {
        let va = EmbeddingVector::new(a);
        let vb = EmbeddingVector::new(b);
        prop_assume!(!va.is_zero() && !vb.is_zero());
        let ab = cosine_similarity(&va, &vb).unwrap();
        let ba = cosine_similarity(&vb, &va).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
        let scaled = cosine_similarity(&va.scaled(s), &vb).unwrap();
        prop_assert!((ab - scaled).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn embeddings_are_unit_or_zero(text in "\\PC{0,80}") {
        let v = embed_text(&text, &EmbedderConfig::default());
        let n = v.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn top_k_is_a_prefix_of_a_larger_k(seed in 0u64..1000, k in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds = random_set(4, 6, "s", &mut rng);
        let cands = random_set(40, 6, "c", &mut rng);
        let small = retrieve_top_k(&seeds, &cands, k).unwrap();
        let large = retrieve_top_k(&seeds, &cands, k + 5).unwrap();
        prop_assert_eq!(&large[..small.len()], &small[..]);
    }

    #[test]
    fn prune_ignores_input_order(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let set = random_set(30, 3, "v", &mut rng);
        let mut reversed = set.clone();
        reversed.reverse();
        prop_assert_eq!(prune_redundant(&set, 0.9).unwrap(), prune_redundant(&reversed, 0.9).unwrap());
    }
}
