//! Dense document embeddings and exact cosine similarity.
//!
//! The built-in embedder hashes every character n-gram of the text (lengths
//! `ngram_min..=ngram_max`, counted over Unicode scalar values) into `dims`
//! buckets with signed hashing, then L2-normalizes the bucket counts. For an
//! n-gram `g`, `h = hash_str(g, hash_seed)`; the bucket is `h % dims` and the
//! sign is `+1` when bit 63 of `h` is clear, `-1` otherwise.
//!
//! Externally computed vectors can be loaded from JSON Lines
//! `{"id": "...", "v": [f64, ...]}` files instead.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, Document};
use crate::hashing::hash_str;
use crate::par::*;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cosine similarity is undefined for the zero vector")]
    ZeroVector,
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("{}:{line}: {message}", path.display())]
    AtLine { path: PathBuf, line: usize, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A dense vector with its Euclidean norm cached.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        EmbeddingVector { values, norm }
    }

    pub fn dims(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    pub fn scaled(&self, factor: f64) -> Self {
        EmbeddingVector::new(self.values.iter().map(|v| v * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub dims: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub hash_seed: u64,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig { dims: 256, ngram_min: 3, ngram_max: 5, hash_seed: 42 }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dims < 2 {
            return Err(EmbedError::InvalidConfig(format!("dims must be >= 2, got {}", self.dims)));
        }
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(EmbedError::InvalidConfig(format!(
                "ngram range must satisfy 1 <= min <= max, got {}:{}",
                self.ngram_min, self.ngram_max
            )));
        }
        Ok(())
    }
}

/// Embed raw text. Texts shorter than `ngram_min` characters produce the
/// zero vector.
pub fn embed_text(text: &str, cfg: &EmbedderConfig) -> EmbeddingVector {
    let mut buckets = vec![0.0f64; cfg.dims];
    let bounds: Vec<usize> = text.char_indices().map(|(i, _)| i).chain([text.len()]).collect();
    let n_chars = bounds.len() - 1;
    for n in cfg.ngram_min..=cfg.ngram_max {
        if n > n_chars {
            break;
        }
        for start in 0..=n_chars - n {
            let gram = &text[bounds[start]..bounds[start + n]];
            let h = hash_str(gram, cfg.hash_seed);
            let bucket = (h % cfg.dims as u64) as usize;
            buckets[bucket] += if h >> 63 == 0 { 1.0 } else { -1.0 };
        }
    }
    let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut buckets {
            *v /= norm;
        }
    }
    EmbeddingVector::new(buckets)
}

pub fn embed_document(doc: &Document, cfg: &EmbedderConfig) -> EmbeddingVector {
    embed_text(&doc.text, cfg)
}

/// Embed a batch of documents in parallel, keyed by document id.
pub fn embed_corpus(docs: &[Document], cfg: &EmbedderConfig) -> Result<IndexMap<String, EmbeddingVector>, EmbedError> {
    cfg.validate()?;
    let vectors: Vec<EmbeddingVector> = docs.par_iter().map(|d| embed_document(d, cfg)).collect();
    Ok(docs.iter().map(|d| d.id.clone()).zip(vectors).collect())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cosine of two vectors whose dims and non-zero norms were already checked.
#[inline]
pub(crate) fn cosine_unchecked(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    (dot(&a.values, &b.values) / (a.norm * b.norm)).clamp(-1.0, 1.0)
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dims() != b.dims() {
        return Err(EmbedError::DimensionMismatch { left: a.dims(), right: b.dims() });
    }
    if a.is_zero() || b.is_zero() {
        return Err(EmbedError::ZeroVector);
    }
    Ok(cosine_unchecked(a, b))
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    id: String,
    v: Vec<f64>,
}

/// Load an embedding file. Dims are fixed by the first record; norms are
/// recomputed on load.
pub fn load_external_embeddings(path: &Path) -> Result<IndexMap<String, EmbeddingVector>, EmbedError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = IndexMap::new();
    let mut dims = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| EmbedError::AtLine { path: path.to_path_buf(), line: i + 1, message };
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        if rec.v.is_empty() {
            return Err(at(format!("record `{}` has no values", rec.id)));
        }
        if rec.v.iter().any(|x| !x.is_finite()) {
            return Err(at(format!("record `{}` has a non-finite value", rec.id)));
        }
        match dims {
            None => dims = Some(rec.v.len()),
            Some(d) if d != rec.v.len() => {
                return Err(at(format!("record `{}` has dims {}, expected {d}", rec.id, rec.v.len())));
            }
            Some(_) => {}
        }
        if out.contains_key(&rec.id) {
            return Err(at(format!("duplicate id `{}`", rec.id)));
        }
        out.insert(rec.id, EmbeddingVector::new(rec.v));
    }
    Ok(out)
}

pub fn write_embeddings<'a, I>(path: &Path, vectors: I) -> Result<(), EmbedError>
where
    I: IntoIterator<Item = (&'a String, &'a EmbeddingVector)>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for (id, v) in vectors {
        let line = serde_json::to_string(&EmbeddingRecord { id: id.clone(), v: v.values.clone() })
            .expect("finite floats serialize");
        writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))?;
    Ok(())
}

/// Restrict a vector map to ids in `keep`, preserving order.
pub fn select<'a>(
    vectors: &IndexMap<String, EmbeddingVector>,
    keep: impl IntoIterator<Item = &'a String>,
) -> IndexMap<String, EmbeddingVector> {
    let keep: HashSet<&String> = keep.into_iter().collect();
    vectors.iter().filter(|(id, _)| keep.contains(id)).map(|(k, v)| (k.clone(), v.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DataClass;

    #[test]
    fn empty_text_embeds_to_zero() {
        let v = embed_text("", &EmbedderConfig::default());
        assert_eq!(v.dims(), 256);
        assert!(v.is_zero());
        assert!(embed_text("ab", &EmbedderConfig::default()).is_zero());
    }

    #[test]
    fn embedding_is_deterministic_and_unit() {
        let cfg = EmbedderConfig::default();
        let d = Document::new("x", "s", DataClass::AgentDoc, "GET /v1/forecast?city=Paris");
        let a = embed_document(&d, &cfg);
        let b = embed_document(&d, &cfg);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn hash_seed_changes_the_vector() {
        let a = embed_text("weather api", &EmbedderConfig { hash_seed: 1, ..Default::default() });
        let b = embed_text("weather api", &EmbedderConfig { hash_seed: 2, ..Default::default() });
        assert_ne!(a, b);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine_similarity(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn multibyte_text_is_handled_per_char() {
        let cfg = EmbedderConfig { ngram_min: 3, ngram_max: 3, ..Default::default() };
        // Three scalar values, so exactly one trigram.
        let v = embed_text("日本語", &cfg);
        assert_eq!(v.values().iter().filter(|x| **x != 0.0).count(), 1);
    }

    #[test]
    fn cosine_basics() {
        let e1 = EmbeddingVector::new(vec![1.0, 0.0]);
        let e2 = EmbeddingVector::new(vec![0.0, 1.0]);
        let v = EmbeddingVector::new(vec![0.3, -0.7]);
        assert_eq!(cosine_similarity(&e1, &e2).unwrap(), 0.0);
        assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            cosine_similarity(&e1, &EmbeddingVector::new(vec![1.0, 0.0, 0.0])),
            Err(EmbedError::DimensionMismatch { left: 2, right: 3 })
        ));
        assert!(matches!(
            cosine_similarity(&e1, &EmbeddingVector::new(vec![0.0, 0.0])),
            Err(EmbedError::ZeroVector)
        ));
    }

    #[test]
    fn config_validation() {
        assert!(EmbedderConfig { dims: 1, ..Default::default() }.validate().is_err());
        assert!(EmbedderConfig { ngram_min: 0, ..Default::default() }.validate().is_err());
        assert!(EmbedderConfig { ngram_min: 6, ngram_max: 5, ..Default::default() }.validate().is_err());
        assert!(EmbedderConfig::default().validate().is_ok());
    }

    #[test]
    fn load_file_examples() {
        let dir = tempfile::tempdir().unwrap();
        let ok = dir.path().join("ok.jsonl");
        std::fs::write(&ok, "{\"id\":\"a\",\"v\":[1,0,0,0]}\n{\"id\":\"b\",\"v\":[0,2,0,0]}\n").unwrap();
        let m = load_external_embeddings(&ok).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m["b"].norm(), 2.0);

        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{\"id\":\"a\",\"v\":[1,0,0,0]}\n{\"id\":\"b\",\"v\":[0,2,0,0,1]}\n").unwrap();
        match load_external_embeddings(&bad) {
            Err(EmbedError::AtLine { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("dims 5"));
            }
            other => panic!("{other:?}"),
        }

        let dup = dir.path().join("dup.jsonl");
        std::fs::write(&dup, "{\"id\":\"a\",\"v\":[1]}\n{\"id\":\"a\",\"v\":[2]}\n").unwrap();
        assert!(matches!(load_external_embeddings(&dup), Err(EmbedError::AtLine { line: 2, .. })));
    }

    #[test]
    fn write_then_load_preserves_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        let mut m = IndexMap::new();
        m.insert("x".to_string(), embed_text("invoke the search endpoint", &EmbedderConfig::default()));
        m.insert("y".to_string(), EmbeddingVector::new(vec![0.1; 256]));
        write_embeddings(&path, &m).unwrap();
        assert_eq!(load_external_embeddings(&path).unwrap(), m);
    }
}
