//! Exact top-K seed-to-candidate retrieval and greedy redundancy pruning.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embed::{cosine_unchecked, EmbeddingVector};
use crate::par::*;

/// Documented fallback for the prune threshold when a run does not set one.
pub const DEFAULT_PRUNE_THRESHOLD: f64 = 0.95;

const SCORE_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("seed set is empty (after excluding zero vectors)")]
    EmptySeeds,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("vector `{id}` has dims {found}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, found: usize },
    #[error("vector `{0}` is the zero vector")]
    ZeroVector(String),
    #[error("prune threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("{}:{line}: {message}", path.display())]
    AtLine { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub candidate_id: String,
    pub best_seed_id: String,
    pub score: f64,
}

/// Descending score, then ascending candidate id.
pub fn hit_order(a: &RetrievalHit, b: &RetrievalHit) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.candidate_id.cmp(&b.candidate_id))
}

fn check_dims(id: &str, v: &EmbeddingVector, expected: usize) -> Result<(), RetrieveError> {
    if v.dims() != expected {
        return Err(RetrieveError::DimensionMismatch { id: id.to_string(), expected, found: v.dims() });
    }
    Ok(())
}

/// Top-`k` candidates by their maximum cosine similarity to any seed.
///
/// Zero vectors on either side are skipped. Among seeds that tie for a
/// candidate's maximum, the smallest seed id is reported.
pub fn retrieve_top_k(
    seeds: &IndexMap<String, EmbeddingVector>,
    candidates: &IndexMap<String, EmbeddingVector>,
    k: usize,
) -> Result<Vec<RetrievalHit>, RetrieveError> {
    if k == 0 {
        return Err(RetrieveError::InvalidK);
    }
    let mut seed_list: Vec<(&String, &EmbeddingVector)> =
        seeds.iter().filter(|(_, v)| !v.is_zero()).collect();
    if seed_list.is_empty() {
        return Err(RetrieveError::EmptySeeds);
    }
    seed_list.sort_by(|a, b| a.0.cmp(b.0));
    let dims = seed_list[0].1.dims();
    for (id, v) in &seed_list {
        check_dims(id, v, dims)?;
    }
    let cand_list: Vec<(&String, &EmbeddingVector)> =
        candidates.iter().filter(|(_, v)| !v.is_zero()).collect();
    for (id, v) in &cand_list {
        check_dims(id, v, dims)?;
    }

    let partials: Vec<Vec<RetrievalHit>> = cand_list
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let mut local: Vec<RetrievalHit> = chunk
                .iter()
                .map(|(cid, cv)| {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_seed = seed_list[0].0;
                    for (sid, sv) in &seed_list {
                        let s = cosine_unchecked(cv, sv);
                        if s > best {
                            best = s;
                            best_seed = sid;
                        }
                    }
                    RetrievalHit { candidate_id: (*cid).clone(), best_seed_id: best_seed.clone(), score: best }
                })
                .collect();
            local.sort_by(hit_order);
            local.truncate(k);
            local
        })
        .collect();

    let mut merged: Vec<RetrievalHit> = partials.into_iter().flatten().collect();
    merged.sort_by(hit_order);
    merged.truncate(k);
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedPair {
    pub kept_id: String,
    pub removed_id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub retained_ids: Vec<String>,
    pub removed_pairs: Vec<RemovedPair>,
    pub threshold: f64,
}

/// Greedy pruning in ascending id order: a document is dropped when its
/// cosine to some already-retained document reaches `threshold`. The
/// reported `kept_id` is the most similar retained document.
///
/// The scan is sequential because its outcome depends on order; only the
/// similarity row against the retained set is computed in parallel.
pub fn prune_redundant(
    docs: &IndexMap<String, EmbeddingVector>,
    threshold: f64,
) -> Result<PruneReport, RetrieveError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RetrieveError::InvalidThreshold(threshold));
    }
    let mut order: Vec<(&String, &EmbeddingVector)> = docs.iter().collect();
    order.sort_by(|a, b| a.0.cmp(b.0));
    let dims = order.first().map(|(_, v)| v.dims()).unwrap_or(0);

    let mut retained: Vec<(&String, &EmbeddingVector)> = Vec::new();
    let mut removed_pairs = Vec::new();
    for (id, v) in order {
        check_dims(id, v, dims)?;
        if v.is_zero() {
            return Err(RetrieveError::ZeroVector(id.clone()));
        }
        let sims: Vec<f64> = retained.par_iter().map(|(_, r)| cosine_unchecked(v, r)).collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in sims.into_iter().enumerate() {
            if s >= threshold && best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        match best {
            Some((i, s)) => removed_pairs.push(RemovedPair {
                kept_id: retained[i].0.clone(),
                removed_id: id.clone(),
                similarity: s,
            }),
            None => retained.push((id, v)),
        }
    }
    Ok(PruneReport {
        retained_ids: retained.into_iter().map(|(id, _)| id.clone()).collect(),
        removed_pairs,
        threshold,
    })
}

pub fn write_hits(path: &Path, hits: &[RetrievalHit]) -> Result<(), RetrieveError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for hit in hits {
        writeln!(w, "{}", serde_json::to_string(hit).expect("hit serializes")).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))?;
    Ok(())
}

pub fn read_hits(path: &Path) -> Result<Vec<RetrievalHit>, RetrieveError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut hits = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        hits.push(serde_json::from_str(&line).map_err(|e| RetrieveError::AtLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vmap(entries: &[(&str, &[f64])]) -> IndexMap<String, EmbeddingVector> {
        entries.iter().map(|(id, v)| (id.to_string(), EmbeddingVector::new(v.to_vec()))).collect()
    }

    #[test]
    fn duplicate_beats_orthogonal() {
        let seeds = vmap(&[("s", &[1.0, 0.0, 0.0])]);
        let cands = vmap(&[("dup", &[2.0, 0.0, 0.0]), ("orth", &[0.0, 1.0, 0.0])]);
        let hits = retrieve_top_k(&seeds, &cands, 1).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].candidate_id, "dup");
        assert_eq!(hits[0].best_seed_id, "s");
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn saturated_k_returns_everything_sorted() {
        let seeds = vmap(&[("s", &[1.0, 0.0])]);
        let cands = vmap(&[("c", &[1.0, 1.0]), ("b", &[1.0, 1.0]), ("a", &[0.0, 1.0]), ("z", &[1.0, 0.0])]);
        let hits = retrieve_top_k(&seeds, &cands, 10).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.candidate_id.as_str()).collect();
        assert_eq!(ids, vec!["z", "b", "c", "a"]);
    }

    #[test]
    fn seed_ties_report_smallest_seed_id() {
        let seeds = vmap(&[("s2", &[1.0, 0.0]), ("s1", &[1.0, 0.0])]);
        let cands = vmap(&[("c", &[1.0, 0.0])]);
        assert_eq!(retrieve_top_k(&seeds, &cands, 1).unwrap()[0].best_seed_id, "s1");
    }

    #[test]
    fn retrieval_errors() {
        let seeds = vmap(&[("s", &[1.0, 0.0])]);
        let cands = vmap(&[("c", &[1.0, 0.0, 0.0])]);
        assert!(matches!(retrieve_top_k(&seeds, &cands, 0), Err(RetrieveError::InvalidK)));
        assert!(matches!(
            retrieve_top_k(&IndexMap::new(), &cands, 1),
            Err(RetrieveError::EmptySeeds)
        ));
        assert!(matches!(
            retrieve_top_k(&vmap(&[("s", &[0.0, 0.0])]), &cands, 1),
            Err(RetrieveError::EmptySeeds)
        ));
        assert!(matches!(retrieve_top_k(&seeds, &cands, 1), Err(RetrieveError::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_candidates_are_skipped() {
        let seeds = vmap(&[("s", &[1.0, 0.0])]);
        let cands = vmap(&[("zero", &[0.0, 0.0]), ("c", &[0.5, 0.5])]);
        let hits = retrieve_top_k(&seeds, &cands, 5).unwrap();
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].candidate_id, "c");
    }

    #[test]
    fn exact_duplicates_are_pruned() {
        let docs = vmap(&[("b", &[1.0, 2.0]), ("a", &[1.0, 2.0])]);
        let r = prune_redundant(&docs, 0.95).unwrap();
        assert_eq!(r.retained_ids, vec!["a".to_string()]);
        assert_eq!(r.removed_pairs.len(), 1);
        assert_eq!(r.removed_pairs[0].kept_id, "a");
        assert_eq!(r.removed_pairs[0].removed_id, "b");
        assert!((r.removed_pairs[0].similarity - 1.0).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_set_is_fully_retained() {
        let docs = vmap(&[("a", &[1.0, 0.0, 0.0]), ("b", &[0.0, 1.0, 0.0]), ("c", &[0.0, 0.0, 1.0])]);
        for t in [1e-9, 0.5, 1.0] {
            assert_eq!(prune_redundant(&docs, t).unwrap().retained_ids.len(), 3);
        }
    }

    #[test]
    fn threshold_validation() {
        let docs = vmap(&[("a", &[1.0])]);
        for t in [0.0, -0.1, 1.01, f64::NAN] {
            assert!(matches!(prune_redundant(&docs, t), Err(RetrieveError::InvalidThreshold(_))));
        }
        assert!(matches!(
            prune_redundant(&vmap(&[("a", &[0.0])]), 0.9),
            Err(RetrieveError::ZeroVector(_))
        ));
    }

    #[test]
    fn greedy_scan_is_not_monotone_in_threshold() {
        // "a" sits 40 degrees from "b"; "c" and "d" sit 25 degrees either
        // side of "b" in an orthogonal plane. At 0.7 "a" absorbs "b", which
        // frees "c" and "d"; at 0.9 "b" survives and absorbs both.
        let deg = std::f64::consts::PI / 180.0;
        let b = [1.0, 0.0, 0.0];
        let a = [(40.0 * deg).cos(), 0.0, (40.0 * deg).sin()];
        let c = [(25.0 * deg).cos(), (25.0 * deg).sin(), 0.0];
        let d = [(25.0 * deg).cos(), -(25.0 * deg).sin(), 0.0];
        let docs = vmap(&[("a", &a), ("b", &b), ("c", &c), ("d", &d)]);
        let low = prune_redundant(&docs, 0.7).unwrap();
        let high = prune_redundant(&docs, 0.9).unwrap();
        assert_eq!(low.retained_ids, vec!["a", "c", "d"]);
        assert_eq!(high.retained_ids, vec!["a", "b"]);
    }

    #[test]
    fn hits_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hits.jsonl");
        let hits = vec![RetrievalHit { candidate_id: "c".into(), best_seed_id: "s".into(), score: 0.25 }];
        write_hits(&path, &hits).unwrap();
        assert_eq!(read_hits(&path).unwrap(), hits);
    }
}
