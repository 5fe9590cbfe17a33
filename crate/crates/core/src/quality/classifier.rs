//! Hashed word n-gram linear classifier (agent vs general).
//!
//! Each text is split on whitespace. Unigrams seen at least `min_count`
//! times in training get their own embedding row; every word n-gram of
//! length `2..=word_ngram_max` (over all tokens, in or out of vocabulary) is
//! hashed into one of `bucket_count` rows after the vocabulary. The rows of a
//! text are averaged into a `dims`-vector and fed to a two-class softmax
//! head with no bias. Training is plain sequential SGD on cross-entropy with
//! the learning rate decaying linearly to zero over all epochs.
//!
//! Input rows start at zero and the head starts uniform in
//! `[-1/dims, 1/dims]` (seeded), so rows never touched by training stay
//! exactly zero. Only touched rows are stored.
//!
//! # Model file layout (format version 1, little-endian)
//!
//! ```text
//! magic    8 bytes      "FRGNGLC\0"
//! version  u32          1
//! hlen     u32          length of the JSON header
//! header   hlen bytes   {"format_version","hyperparams","dims","vocab_size",
//!                        "stored_rows","classes","epoch_losses"}
//! vocab    vocab_size × (u32 byte length, UTF-8 bytes, u64 count), word-id order
//! rows     stored_rows × (u64 row index, dims × f64), ascending row index;
//!          every row not listed is all zeros
//! head     dims × 2 f64, row-major; column 0 = agent, column 1 = general
//! ```
//!
//! Row indices below `vocab_size` are words; row `vocab_size + b` is
//! hash bucket `b`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Label, QualityError};
use crate::corpus::CorpusError;
use crate::hashing::{combine, hash_str};

pub const MODEL_MAGIC: &[u8; 8] = b"FRGNGLC\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Feature hashing uses a fixed seed so the feature space does not depend
/// on the initialisation seed.
const TOKEN_HASH_SEED: u64 = 0x6e67_7261_6d73;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterHyperparams {
    pub dims: usize,
    pub learning_rate: f64,
    pub word_ngram_max: usize,
    pub min_count: u64,
    pub epochs: usize,
    pub bucket_count: u64,
    pub rng_seed: u64,
}

impl Default for FilterHyperparams {
    fn default() -> Self {
        FilterHyperparams {
            dims: 256,
            learning_rate: 0.1,
            word_ngram_max: 3,
            min_count: 3,
            epochs: 3,
            bucket_count: 2_000_000,
            rng_seed: 42,
        }
    }
}

impl FilterHyperparams {
    pub fn validate(&self) -> Result<(), QualityError> {
        let bad = |m: &str| Err(QualityError::InvalidHyperparams(m.to_string()));
        if self.dims == 0 {
            return bad("dims must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.word_ngram_max == 0 {
            return bad("word_ngram_max must be positive");
        }
        if self.min_count == 0 {
            return bad("min_count must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.bucket_count == 0 {
            return bad("bucket_count must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLinearClassifier {
    hp: FilterHyperparams,
    vocab: Vec<(String, u64)>,
    word_ids: HashMap<String, u64>,
    /// row index -> slot in `table`
    slots: HashMap<u64, usize>,
    table: Vec<f64>,
    /// dims × 2, row-major
    head: Vec<f64>,
    epoch_losses: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    hyperparams: FilterHyperparams,
    dims: usize,
    vocab_size: u64,
    stored_rows: u64,
    classes: [String; 2],
    epoch_losses: Vec<f64>,
}

impl NgramLinearClassifier {
    fn empty(hp: FilterHyperparams, vocab: Vec<(String, u64)>) -> Self {
        let word_ids = vocab.iter().enumerate().map(|(i, (w, _))| (w.clone(), i as u64)).collect();
        let head = vec![0.0; hp.dims * 2];
        NgramLinearClassifier { hp, vocab, word_ids, slots: HashMap::new(), table: Vec::new(), head, epoch_losses: Vec::new() }
    }

    pub fn hyperparams(&self) -> &FilterHyperparams {
        &self.hp
    }

    pub fn vocab(&self) -> &[(String, u64)] {
        &self.vocab
    }

    /// Mean training loss of each epoch, in order.
    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn stored_rows(&self) -> usize {
        self.slots.len()
    }

    /// Embedding row of `index`, or `None` when it is all zeros.
    pub fn row(&self, index: u64) -> Option<&[f64]> {
        let d = self.hp.dims;
        self.slots.get(&index).map(|&s| &self.table[s * d..(s + 1) * d])
    }

    /// Head weight for hidden unit `dim` and class `label`.
    pub fn head_weight(&self, dim: usize, label: Label) -> f64 {
        self.head[dim * 2 + label.index()]
    }

    /// Row indices activated by `text`, with multiplicity.
    pub fn features(&self, text: &str) -> Vec<u64> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        let nwords = self.vocab.len() as u64;
        let mut feats: Vec<u64> = tokens.iter().filter_map(|t| self.word_ids.get(*t).copied()).collect();
        if self.hp.word_ngram_max >= 2 {
            let hashes: Vec<u64> = tokens.iter().map(|t| hash_str(t, TOKEN_HASH_SEED)).collect();
            for start in 0..hashes.len() {
                let mut h = hashes[start];
                for n in 2..=self.hp.word_ngram_max {
                    let end = start + n;
                    if end > hashes.len() {
                        break;
                    }
                    h = combine(h, hashes[end - 1]);
                    feats.push(nwords + h % self.hp.bucket_count);
                }
            }
        }
        feats
    }

    fn hidden(&self, feats: &[u64]) -> Vec<f64> {
        let d = self.hp.dims;
        let mut hidden = vec![0.0; d];
        if feats.is_empty() {
            return hidden;
        }
        for f in feats {
            if let Some(row) = self.row(*f) {
                for (h, r) in hidden.iter_mut().zip(row) {
                    *h += r;
                }
            }
        }
        let inv = 1.0 / feats.len() as f64;
        for h in &mut hidden {
            *h *= inv;
        }
        hidden
    }

    fn softmax(&self, hidden: &[f64]) -> [f64; 2] {
        let mut z = [0.0f64; 2];
        for (i, h) in hidden.iter().enumerate() {
            z[0] += h * self.head[i * 2];
            z[1] += h * self.head[i * 2 + 1];
        }
        let m = z[0].max(z[1]);
        let e0 = (z[0] - m).exp();
        let e1 = (z[1] - m).exp();
        let s = e0 + e1;
        [e0 / s, e1 / s]
    }

    /// Class probabilities `[agent, general]`.
    pub fn predict_proba(&self, text: &str) -> [f64; 2] {
        let feats = self.features(text);
        self.softmax(&self.hidden(&feats))
    }

    /// Probability that `text` is agent-relevant.
    pub fn predict_score(&self, text: &str) -> f64 {
        self.predict_proba(text)[0]
    }

    fn row_mut(&mut self, index: u64) -> &mut [f64] {
        let d = self.hp.dims;
        let next = self.slots.len();
        let slot = *self.slots.entry(index).or_insert(next);
        if slot == next {
            self.table.resize((next + 1) * d, 0.0);
        }
        &mut self.table[slot * d..(slot + 1) * d]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let d = self.hp.dims;
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            hyperparams: self.hp.clone(),
            dims: d,
            vocab_size: self.vocab.len() as u64,
            stored_rows: self.slots.len() as u64,
            classes: [Label::Agent.as_str().into(), Label::General.as_str().into()],
            epoch_losses: self.epoch_losses.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + header.len() + self.table.len() * 8 + self.slots.len() * 8);
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (word, count) in &self.vocab {
            out.extend_from_slice(&(word.len() as u32).to_le_bytes());
            out.extend_from_slice(word.as_bytes());
            out.extend_from_slice(&count.to_le_bytes());
        }
        let mut rows: Vec<(u64, usize)> = self.slots.iter().map(|(r, s)| (*r, *s)).collect();
        rows.sort_unstable();
        for (row, slot) in rows {
            out.extend_from_slice(&row.to_le_bytes());
            for v in &self.table[slot * d..(slot + 1) * d] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for v in &self.head {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, QualityError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MODEL_MAGIC {
            return Err(QualityError::ModelFormat("bad magic".into()));
        }
        let version = r.u32()?;
        if version != MODEL_FORMAT_VERSION {
            return Err(QualityError::ModelFormat(format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: ModelHeader = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| QualityError::ModelFormat(format!("header: {e}")))?;
        header.hyperparams.validate()?;
        if header.dims != header.hyperparams.dims {
            return Err(QualityError::ModelFormat("header dims disagree with hyperparams".into()));
        }
        let d = header.dims;
        let mut vocab = Vec::with_capacity(header.vocab_size as usize);
        for _ in 0..header.vocab_size {
            let len = r.u32()? as usize;
            let word = std::str::from_utf8(r.take(len)?)
                .map_err(|_| QualityError::ModelFormat("vocab entry is not UTF-8".into()))?
                .to_string();
            vocab.push((word, r.u64()?));
        }
        let mut model = NgramLinearClassifier::empty(header.hyperparams, vocab);
        let mut last = None;
        for _ in 0..header.stored_rows {
            let row = r.u64()?;
            if last.is_some_and(|l| row <= l) {
                return Err(QualityError::ModelFormat("rows are not strictly ascending".into()));
            }
            last = Some(row);
            for i in 0..d {
                let v = r.f64()?;
                model.row_mut(row)[i] = v;
            }
        }
        for i in 0..d * 2 {
            model.head[i] = r.f64()?;
        }
        if r.pos != bytes.len() {
            return Err(QualityError::ModelFormat("trailing bytes".into()));
        }
        model.epoch_losses = header.epoch_losses;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), QualityError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| CorpusError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, QualityError> {
        let bytes = fs::read(path).map_err(|e| CorpusError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], QualityError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| QualityError::ModelFormat("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, QualityError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, QualityError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, QualityError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Unigram vocabulary with `count >= min_count`, ordered by descending count
/// then ascending word.
fn build_vocab<S: AsRef<str>>(samples: &[(S, Label)], min_count: u64) -> Vec<(String, u64)> {
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for (text, _) in samples {
        for tok in text.as_ref().split_whitespace() {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut vocab: Vec<(String, u64)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).map(|(w, c)| (w.to_string(), c)).collect();
    vocab.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    vocab
}

/// Train on `(text, label)` pairs in the given order.
pub fn train_filter<S: AsRef<str>>(
    samples: &[(S, Label)],
    hp: &FilterHyperparams,
) -> Result<NgramLinearClassifier, QualityError> {
    hp.validate()?;
    let has_agent = samples.iter().any(|(_, l)| *l == Label::Agent);
    let has_general = samples.iter().any(|(_, l)| *l == Label::General);
    if !(has_agent && has_general) {
        return Err(QualityError::SingleClass);
    }
    let vocab = build_vocab(samples, hp.min_count);
    if vocab.is_empty() {
        return Err(QualityError::EmptyVocabulary);
    }
    let mut model = NgramLinearClassifier::empty(hp.clone(), vocab);
    let d = hp.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.rng_seed);
    let bound = 1.0 / d as f64;
    for w in &mut model.head {
        *w = rng.random_range(-bound..bound);
    }

    let features: Vec<Vec<u64>> = samples.iter().map(|(t, _)| model.features(t.as_ref())).collect();
    let total_steps = (hp.epochs * samples.len()) as f64;
    let mut step = 0usize;
    let mut grad = vec![0.0f64; d];
    for _ in 0..hp.epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for ((_, label), feats) in samples.iter().zip(&features) {
            let lr = hp.learning_rate * (1.0 - step as f64 / total_steps);
            step += 1;
            if feats.is_empty() {
                continue;
            }
            let hidden = model.hidden(feats);
            let p = model.softmax(&hidden);
            loss_sum -= p[label.index()].max(1e-300).ln();
            seen += 1;

            grad.iter_mut().for_each(|g| *g = 0.0);
            for (class, pc) in p.iter().enumerate() {
                let target = if class == label.index() { 1.0 } else { 0.0 };
                let alpha = lr * (target - pc);
                for i in 0..d {
                    grad[i] += alpha * model.head[i * 2 + class];
                    model.head[i * 2 + class] += alpha * hidden[i];
                }
            }
            let inv = 1.0 / feats.len() as f64;
            for f in feats {
                let row = model.row_mut(*f);
                for (r, g) in row.iter_mut().zip(&grad) {
                    *r += g * inv;
                }
            }
        }
        model.epoch_losses.push(if seen > 0 { loss_sum / seen as f64 } else { 0.0 });
    }
    Ok(model)
}
