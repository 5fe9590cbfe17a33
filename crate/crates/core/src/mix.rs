//! Token-budgeted mixture composition with a provenance manifest.
//!
//! Class targets are a largest-remainder apportionment of the budget. Each
//! class draws from a seeded shuffle of its pool: first while the next
//! document still fits under the class target, then a global top-up pass
//! hands the leftover budget to classes still short of target. The top-up
//! keeps the total at or under budget and within one document of it. The
//! output order interleaves classes so each class's emitted share of its
//! realized tokens advances evenly.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{compute_stats, write_corpus, CorpusError, DataClass, Document};
use crate::hashing::{hash_str, sha256_hex, splitmix64};
use crate::par::*;

const CLASS_SEED_SALT: u64 = 0x6d69_785f_636c_6173;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid mix spec: {0}")]
    InvalidSpec(String),
    #[error("pool for class `{0}` is missing or empty")]
    EmptyPool(MixClass),
    #[error("pool for class `{class}` holds {available} tokens, {shortfall} short of its {target}-token target")]
    PoolExhausted { class: MixClass, target: u64, available: u64, shortfall: u64 },
    #[error("document `{id}` of class `{data_class}` does not belong in the `{class}` pool")]
    ForeignDoc { class: MixClass, id: String, data_class: DataClass },
    #[error("document `{0}` appears in more than one pool")]
    DuplicateId(String),
    #[error("manifest lists `{0}` but the shards do not contain it")]
    MissingDoc(String),
    #[error("shards contain `{0}`, which the manifest does not list")]
    UnexpectedDoc(String),
    #[error("document `{id}` is listed under `{listed}` but has class `{actual}`")]
    MisfiledDoc { id: String, listed: MixClass, actual: DataClass },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Mixture class. `agent` pools both agent data classes; `agent_doc` and
/// `agent_traj` address them separately and cannot be combined with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixClass {
    Agent,
    AgentDoc,
    AgentTraj,
    Text,
    Code,
}

impl MixClass {
    pub const ALL: [MixClass; 5] =
        [MixClass::Agent, MixClass::AgentDoc, MixClass::AgentTraj, MixClass::Text, MixClass::Code];

    pub fn as_str(self) -> &'static str {
        match self {
            MixClass::Agent => "agent",
            MixClass::AgentDoc => "agent_doc",
            MixClass::AgentTraj => "agent_traj",
            MixClass::Text => "text",
            MixClass::Code => "code",
        }
    }

    pub fn contains(self, class: DataClass) -> bool {
        match self {
            MixClass::Agent => class.is_agent(),
            MixClass::AgentDoc => class == DataClass::AgentDoc,
            MixClass::AgentTraj => class == DataClass::AgentTraj,
            MixClass::Text => class == DataClass::Text,
            MixClass::Code => class == DataClass::Code,
        }
    }
}

impl fmt::Display for MixClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MixClass {
    type Err = MixError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MixClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| MixError::InvalidSpec(format!("unknown mix class `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixSpec {
    pub ratios: BTreeMap<MixClass, f64>,
    pub total_token_budget: u64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl MixSpec {
    pub fn equal(classes: &[MixClass], total_token_budget: u64, rng_seed: u64) -> Self {
        MixSpec { ratios: classes.iter().map(|c| (*c, 1.0)).collect(), total_token_budget, rng_seed }
    }

    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| MixError::InvalidSpec(format!("{}: {} at `{}`", path.display(), e.inner(), e.path())))
    }

    pub fn validate(&self) -> Result<(), MixError> {
        if self.total_token_budget == 0 {
            return Err(MixError::InvalidSpec("total_token_budget must be positive".into()));
        }
        if let Some((c, r)) = self.ratios.iter().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
            return Err(MixError::InvalidSpec(format!("ratio for `{c}` is {r}; ratios must be non-negative")));
        }
        if !self.ratios.values().any(|r| *r > 0.0) {
            return Err(MixError::InvalidSpec("at least one ratio must be positive".into()));
        }
        let agent = self.ratios.contains_key(&MixClass::Agent);
        let split = self.ratios.contains_key(&MixClass::AgentDoc) || self.ratios.contains_key(&MixClass::AgentTraj);
        if agent && split {
            return Err(MixError::InvalidSpec("`agent` cannot be combined with `agent_doc`/`agent_traj`".into()));
        }
        Ok(())
    }

    /// Ratios scaled to sum to one.
    pub fn normalized(&self) -> BTreeMap<MixClass, f64> {
        let sum: f64 = self.ratios.values().sum();
        self.ratios.iter().map(|(c, r)| (*c, r / sum)).collect()
    }

    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("spec serializes").as_bytes())
    }

    /// Integer class targets summing exactly to the budget.
    pub fn targets(&self) -> BTreeMap<MixClass, u64> {
        largest_remainder(&self.normalized(), self.total_token_budget)
    }
}

fn largest_remainder(shares: &BTreeMap<MixClass, f64>, total: u64) -> BTreeMap<MixClass, u64> {
    let mut out = BTreeMap::new();
    let mut rems = Vec::new();
    let mut assigned = 0u64;
    for (c, s) in shares {
        let exact = s * total as f64;
        let floor = (exact.floor() as u64).min(total);
        assigned += floor;
        out.insert(*c, floor);
        if *s > 0.0 {
            rems.push((exact - floor as f64, *c));
        }
    }
    rems.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total.saturating_sub(assigned);
    for (_, c) in rems.iter().cycle() {
        if left == 0 {
            break;
        }
        *out.get_mut(c).expect("class present") += 1;
        left -= 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassManifest {
    pub ratio: f64,
    pub target_tokens: u64,
    pub realized_tokens: u64,
    /// Drawn documents, in draw order.
    pub doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub docs: u64,
    pub tokens: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardEntry {
    pub file: String,
    pub docs: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixManifest {
    pub spec_hash: String,
    pub rng_seed: u64,
    pub total_token_budget: u64,
    pub realized_tokens: u64,
    pub classes: BTreeMap<MixClass, ClassManifest>,
    pub pools: BTreeMap<MixClass, PoolSummary>,
    #[serde(default)]
    pub shards: Vec<ShardEntry>,
}

impl MixManifest {
    /// Realized token share per class.
    pub fn shares(&self) -> BTreeMap<MixClass, f64> {
        let total = self.realized_tokens.max(1) as f64;
        self.classes.iter().map(|(c, m)| (*c, m.realized_tokens as f64 / total)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), MixError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| CorpusError::io(path, e).into())
    }

    pub fn load(path: &Path) -> Result<Self, MixError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| MixError::Manifest(format!("{}: {e}", path.display())))
    }
}

/// A composed mixture: its manifest and the documents in output order.
#[derive(Debug, Clone)]
pub struct Mixture {
    pub manifest: MixManifest,
    pub docs: Vec<Document>,
}

impl Mixture {
    /// Write the output shards under `prefix` and record them in the
    /// manifest, with paths relative to the prefix's directory.
    pub fn write_shards(&mut self, prefix: &Path, max_docs: usize) -> Result<Vec<PathBuf>, MixError> {
        let paths = write_corpus(prefix, &self.docs, max_docs)?;
        let mut entries = Vec::with_capacity(paths.len());
        let mut remaining = self.docs.len() as u64;
        for p in &paths {
            let bytes = fs::read(p).map_err(|e| CorpusError::io(p, e))?;
            let docs = (max_docs.max(1) as u64).min(remaining);
            remaining -= docs;
            entries.push(ShardEntry {
                file: p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
                docs,
                sha256: sha256_hex(&bytes),
            });
        }
        self.manifest.shards = entries;
        Ok(paths)
    }
}

fn pool_summary(docs: &[&Document]) -> PoolSummary {
    let mut text = String::new();
    for d in docs {
        text.push_str(&d.to_json_line());
        text.push('\n');
    }
    PoolSummary { docs: docs.len() as u64, tokens: docs.iter().map(|d| d.token_count).sum(), sha256: sha256_hex(text.as_bytes()) }
}

fn class_seed(rng_seed: u64, class: MixClass) -> u64 {
    splitmix64(rng_seed ^ hash_str(class.as_str(), CLASS_SEED_SALT))
}

struct Draw<'a> {
    class: MixClass,
    order: Vec<&'a Document>,
    taken: usize,
    realized: u64,
    target: u64,
}

impl Draw<'_> {
    fn next_size(&self) -> Option<u64> {
        self.order.get(self.taken).map(|d| d.token_count)
    }
}

/// Draw a mixture from per-class pools. Pools for classes without a
/// positive ratio are ignored.
pub fn compose_mixture(pools: &BTreeMap<MixClass, Vec<Document>>, spec: &MixSpec) -> Result<Mixture, MixError> {
    spec.validate()?;
    let ratios = spec.normalized();
    let targets = spec.targets();
    let active: Vec<MixClass> = ratios.iter().filter(|(_, r)| **r > 0.0).map(|(c, _)| *c).collect();

    let mut seen = HashSet::new();
    let mut sorted: Vec<(MixClass, Vec<&Document>)> = Vec::new();
    for class in &active {
        let pool = pools.get(class).filter(|p| !p.is_empty()).ok_or(MixError::EmptyPool(*class))?;
        let mut docs: Vec<&Document> = pool.iter().collect();
        for d in &docs {
            if !class.contains(d.data_class) {
                return Err(MixError::ForeignDoc { class: *class, id: d.id.clone(), data_class: d.data_class });
            }
            if !seen.insert(d.id.as_str()) {
                return Err(MixError::DuplicateId(d.id.clone()));
            }
        }
        docs.sort_by(|a, b| a.id.cmp(&b.id));
        let available: u64 = docs.iter().map(|d| d.token_count).sum();
        let target = targets[class];
        if available < target {
            return Err(MixError::PoolExhausted { class: *class, target, available, shortfall: target - available });
        }
        sorted.push((*class, docs));
    }
    let summaries: BTreeMap<MixClass, PoolSummary> = sorted.iter().map(|(c, d)| (*c, pool_summary(d))).collect();

    let mut draws: Vec<Draw> = sorted
        .into_par_iter()
        .map(|(class, mut order)| {
            let mut rng = ChaCha8Rng::seed_from_u64(class_seed(spec.rng_seed, class));
            order.shuffle(&mut rng);
            let target = targets[&class];
            let mut draw = Draw { class, order, taken: 0, realized: 0, target };
            while let Some(size) = draw.next_size() {
                if draw.realized + size > target {
                    break;
                }
                draw.realized += size;
                draw.taken += 1;
            }
            draw
        })
        .collect();

    let budget = spec.total_token_budget;
    loop {
        let used: u64 = draws.iter().map(|d| d.realized).sum();
        let room = budget - used;
        let pick = draws
            .iter()
            .enumerate()
            .filter(|(_, d)| d.realized < d.target && d.next_size().is_some_and(|s| s <= room))
            .max_by(|(_, a), (_, b)| (a.target - a.realized).cmp(&(b.target - b.realized)).then(b.class.cmp(&a.class)))
            .map(|(i, _)| i);
        match pick {
            Some(i) => {
                let d = &mut draws[i];
                d.realized += d.next_size().expect("filtered on next doc");
                d.taken += 1;
            }
            None => break,
        }
    }

    let docs = interleave(&draws, spec.rng_seed);
    let mut classes = BTreeMap::new();
    for d in &draws {
        classes.insert(
            d.class,
            ClassManifest {
                ratio: ratios[&d.class],
                target_tokens: d.target,
                realized_tokens: d.realized,
                doc_ids: d.order[..d.taken].iter().map(|x| x.id.clone()).collect(),
            },
        );
    }
    let manifest = MixManifest {
        spec_hash: spec.hash(),
        rng_seed: spec.rng_seed,
        total_token_budget: budget,
        realized_tokens: draws.iter().map(|d| d.realized).sum(),
        classes,
        pools: summaries,
        shards: Vec::new(),
    };
    Ok(Mixture { manifest, docs })
}

/// Merge class streams, each step emitting from the class whose emitted
/// fraction of its realized tokens is lowest. Ties follow a seeded class
/// permutation.
fn interleave(draws: &[Draw], rng_seed: u64) -> Vec<Document> {
    let mut priority: Vec<usize> = (0..draws.len()).collect();
    priority.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(rng_seed)));
    let mut rank = vec![0; draws.len()];
    for (r, i) in priority.iter().enumerate() {
        rank[*i] = r;
    }
    let mut cursor = vec![0usize; draws.len()];
    let mut emitted = vec![0u64; draws.len()];
    let total: usize = draws.iter().map(|d| d.taken).sum();
    let mut out = Vec::with_capacity(total);
    for _ in 0..total {
        let mut best: Option<usize> = None;
        for i in 0..draws.len() {
            if cursor[i] == draws[i].taken {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    // emitted[i] / realized[i] vs emitted[b] / realized[b]
                    let lhs = emitted[i] as u128 * draws[b].realized.max(1) as u128;
                    let rhs = emitted[b] as u128 * draws[i].realized.max(1) as u128;
                    if lhs < rhs || (lhs == rhs && rank[i] < rank[b]) {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let i = best.expect("documents remain");
        let doc = draws[i].order[cursor[i]];
        cursor[i] += 1;
        emitted[i] += doc.token_count;
        out.push(doc.clone());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCheck {
    pub manifest_tokens: u64,
    pub recounted_tokens: u64,
    pub deviation: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub classes: BTreeMap<MixClass, ClassCheck>,
    pub total_docs: u64,
    pub max_abs_deviation: u64,
}

/// Recount the output corpus against its manifest.
pub fn verify_manifest(manifest: &MixManifest, docs: &[Document]) -> Result<VerifyReport, MixError> {
    let mut listed: BTreeMap<&str, MixClass> = BTreeMap::new();
    for (class, m) in &manifest.classes {
        for id in &m.doc_ids {
            if listed.insert(id.as_str(), *class).is_some() {
                return Err(MixError::Manifest(format!("`{id}` is listed twice")));
            }
        }
    }
    let mut by_class: BTreeMap<MixClass, Vec<&Document>> = BTreeMap::new();
    let mut present = HashSet::new();
    for d in docs {
        let class = *listed.get(d.id.as_str()).ok_or_else(|| MixError::UnexpectedDoc(d.id.clone()))?;
        if !class.contains(d.data_class) {
            return Err(MixError::MisfiledDoc { id: d.id.clone(), listed: class, actual: d.data_class });
        }
        present.insert(d.id.as_str());
        by_class.entry(class).or_default().push(d);
    }
    if let Some(missing) = listed.keys().find(|id| !present.contains(*id)) {
        return Err(MixError::MissingDoc(missing.to_string()));
    }

    let mut classes = BTreeMap::new();
    let mut max_dev = 0;
    for (class, m) in &manifest.classes {
        let members = by_class.get(class).map(Vec::as_slice).unwrap_or_default();
        let stats = compute_stats(members.iter().copied())?;
        let recounted: u64 = DataClass::ALL.iter().filter(|c| class.contains(**c)).map(|c| stats.tokens(*c)).sum();
        let deviation = recounted.abs_diff(m.realized_tokens);
        max_dev = max_dev.max(deviation);
        classes.insert(*class, ClassCheck { manifest_tokens: m.realized_tokens, recounted_tokens: recounted, deviation });
    }
    Ok(VerifyReport { classes, total_docs: docs.len() as u64, max_abs_deviation: max_dev })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(class: DataClass, prefix: &str, n: usize, words: usize) -> Vec<Document> {
        (0..n)
            .map(|i| {
                let text = vec!["w"; words].join(" ");
                Document::new(format!("{prefix}-{i:04}"), prefix, class, text)
            })
            .collect()
    }

    fn three_pools() -> BTreeMap<MixClass, Vec<Document>> {
        BTreeMap::from([
            (MixClass::Agent, pool(DataClass::AgentDoc, "agent", 40, 10)),
            (MixClass::Text, pool(DataClass::Text, "text", 40, 10)),
            (MixClass::Code, pool(DataClass::Code, "code", 40, 10)),
        ])
    }

    #[test]
    fn largest_remainder_sums_exactly() {
        let shares = BTreeMap::from([(MixClass::Agent, 1.0 / 3.0), (MixClass::Text, 1.0 / 3.0), (MixClass::Code, 1.0 / 3.0)]);
        let t = largest_remainder(&shares, 100);
        assert_eq!(t.values().sum::<u64>(), 100);
        assert_eq!(t[&MixClass::Agent], 34);
        assert_eq!(t[&MixClass::Text], 33);
    }

    #[test]
    fn equal_docs_split_evenly() {
        let spec = MixSpec::equal(&[MixClass::Agent, MixClass::Text, MixClass::Code], 300, 1);
        let mix = compose_mixture(&three_pools(), &spec).unwrap();
        for m in mix.manifest.classes.values() {
            assert!(m.realized_tokens.abs_diff(m.target_tokens) <= 10);
        }
        assert!(mix.manifest.realized_tokens <= 300);
        assert!(mix.manifest.realized_tokens >= 290);
        let ids: HashSet<_> = mix.docs.iter().map(|d| &d.id).collect();
        assert_eq!(ids.len(), mix.docs.len());
    }

    #[test]
    fn degenerate_ratio_uses_one_pool() {
        let spec = MixSpec {
            ratios: BTreeMap::from([(MixClass::Agent, 1.0), (MixClass::Text, 0.0), (MixClass::Code, 0.0)]),
            total_token_budget: 100,
            rng_seed: 3,
        };
        let mix = compose_mixture(&three_pools(), &spec).unwrap();
        assert!(mix.docs.iter().all(|d| d.data_class == DataClass::AgentDoc));
        assert_eq!(mix.manifest.realized_tokens, 100);
    }

    #[test]
    fn spec_validation() {
        let pools = three_pools();
        let zero = MixSpec::equal(&[MixClass::Agent], 0, 0);
        assert!(matches!(compose_mixture(&pools, &zero), Err(MixError::InvalidSpec(_))));
        let neg = MixSpec { ratios: BTreeMap::from([(MixClass::Agent, -1.0)]), total_token_budget: 10, rng_seed: 0 };
        assert!(neg.validate().is_err());
        let both = MixSpec::equal(&[MixClass::Agent, MixClass::AgentDoc], 10, 0);
        assert!(both.validate().is_err());
        let none = MixSpec { ratios: BTreeMap::from([(MixClass::Agent, 0.0)]), total_token_budget: 10, rng_seed: 0 };
        assert!(none.validate().is_err());
    }

    #[test]
    fn exhausted_pool_names_class_and_shortfall() {
        let spec = MixSpec::equal(&[MixClass::Agent, MixClass::Text, MixClass::Code], 3000, 1);
        match compose_mixture(&three_pools(), &spec) {
            Err(MixError::PoolExhausted { class, shortfall, .. }) => {
                assert_eq!(class, MixClass::Agent);
                assert_eq!(shortfall, 600);
            }
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn foreign_and_missing_pools() {
        let mut pools = three_pools();
        pools.insert(MixClass::Text, pool(DataClass::Code, "x", 3, 2));
        let spec = MixSpec::equal(&[MixClass::Agent, MixClass::Text], 20, 1);
        assert!(matches!(compose_mixture(&pools, &spec), Err(MixError::ForeignDoc { .. })));
        pools.remove(&MixClass::Text);
        assert!(matches!(compose_mixture(&pools, &spec), Err(MixError::EmptyPool(MixClass::Text))));
    }

    #[test]
    fn verify_detects_deleted_doc() {
        let spec = MixSpec::equal(&[MixClass::Agent, MixClass::Text, MixClass::Code], 300, 5);
        let mix = compose_mixture(&three_pools(), &spec).unwrap();
        let report = verify_manifest(&mix.manifest, &mix.docs).unwrap();
        assert_eq!(report.max_abs_deviation, 0);
        let mut docs = mix.docs.clone();
        let gone = docs.remove(4);
        match verify_manifest(&mix.manifest, &docs) {
            Err(MixError::MissingDoc(id)) => assert_eq!(id, gone.id),
            other => panic!("expected missing doc, got {other:?}"),
        }
    }

    #[test]
    fn interleave_spreads_classes() {
        let spec = MixSpec::equal(&[MixClass::Agent, MixClass::Text, MixClass::Code], 300, 9);
        let mix = compose_mixture(&three_pools(), &spec).unwrap();
        let first: HashSet<_> = mix.docs[..3].iter().map(|d| d.data_class).collect();
        assert_eq!(first.len(), 3);
    }
}
