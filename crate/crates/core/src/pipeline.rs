//! Declarative pipeline runner.
//!
//! A JSON config lists the stages to run and one parameter block per stage.
//! Input paths are relative to the config file, except those starting with
//! `@`, which name artifacts inside the workspace. Every output lands in the
//! workspace. The run report records content hashes of each stage's inputs
//! and outputs, so the provenance of the final mix can be followed back to
//! the raw inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{compute_stats, read_corpus, read_corpus_with, write_corpus, Document, TokenizerKind, DEFAULT_SHARD_DOCS};
use crate::embed::{embed_corpus, load_external_embeddings, select, write_embeddings, EmbedderConfig};
use crate::fixture::ANNOTATION_PROMPT;
use crate::hashing::{hash_str, sha256_hex, splitmix64};
use crate::ingest::{ingest_sources, load_link_graph, load_manifest, load_seed_urls, plan_frontier, DEFAULT_DOC_KEYWORDS};
use crate::mix::{compose_mixture, verify_manifest, MixClass, MixSpec};
use crate::par;
use crate::quality::{
    annotate_batch, evaluate_filter, filter_by_rank, read_labels, train_filter, write_labels, AnnotationBackend,
    FileBackend, FilterHyperparams, HttpBackend, HttpBackendConfig, Label, LabeledSample, NgramLinearClassifier,
    PromptTemplate,
};
use crate::retrieve::{prune_redundant, read_hits, retrieve_top_k, write_hits, DEFAULT_PRUNE_THRESHOLD};
use crate::scaling::{fit_benchmark, optimal_mix_ratio, read_curve, read_observations, MixOptimum};

pub const EXIT_STAGE_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const REPORT_FILE: &str = "run_report.json";
pub const WORKERS_ENV: &str = "FORGE_WORKERS";

const SAMPLE_SALT: u64 = 0x616e_6e6f_7461_7465;
const SPLIT_SALT: u64 = 0x686f_6c64_6f75_7421;
const TRAIN_ORDER_SALT: u64 = 0x7472_6169_6e5f_6f72;

type StageResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: Stage, message: String, report: Box<RunReport> },
    #[error("cannot write run report {}: {message}", path.display())]
    Report { path: PathBuf, message: String },
}

impl PipelineError {
    fn config(field: impl Into<String>, message: impl fmt::Display) -> Self {
        PipelineError::Config { field: field.into(), message: message.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config { .. } => EXIT_CONFIG,
            _ => EXIT_STAGE_FAILED,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Stats,
    Ingest,
    Frontier,
    Embed,
    Retrieve,
    Prune,
    Annotate,
    TrainFilter,
    Evaluate,
    Filter,
    Fit,
    Optimize,
    Mix,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stats => "stats",
            Stage::Ingest => "ingest",
            Stage::Frontier => "frontier",
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Prune => "prune",
            Stage::Annotate => "annotate",
            Stage::TrainFilter => "train-filter",
            Stage::Evaluate => "evaluate",
            Stage::Filter => "filter",
            Stage::Fit => "fit",
            Stage::Optimize => "optimize",
            Stage::Mix => "mix",
        }
    }

    /// Name of the config block holding this stage's parameters.
    pub fn block(self) -> &'static str {
        match self {
            Stage::TrainFilter => "train_filter",
            s => s.as_str(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn default_stats_out() -> String {
    "stats.json".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsStage {
    pub corpus: String,
    #[serde(default = "default_stats_out")]
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestStage {
    pub manifest: String,
    /// Directory against which local source origins resolve; defaults to
    /// the manifest's directory.
    #[serde(default)]
    pub base_dir: Option<String>,
    #[serde(default)]
    pub tokenizer: Option<TokenizerKind>,
    pub out: String,
}

fn default_keywords() -> Vec<String> {
    DEFAULT_DOC_KEYWORDS.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierStage {
    pub seeds: String,
    pub graph: String,
    pub levels: usize,
    #[serde(default = "default_keywords")]
    pub keywords: Vec<String>,
    #[serde(default)]
    pub filter_every_level: bool,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedJob {
    pub corpus: String,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedStage {
    #[serde(default)]
    pub embedder: EmbedderConfig,
    pub jobs: Vec<EmbedJob>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrieveStage {
    pub seeds: String,
    pub candidates: String,
    pub k: usize,
    pub out: String,
}

fn default_threshold() -> f64 {
    DEFAULT_PRUNE_THRESHOLD
}

fn default_prune_report() -> String {
    "prune.json".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneStage {
    pub corpus: String,
    pub embeddings: String,
    /// Restrict pruning to retrieved candidates.
    #[serde(default)]
    pub hits: Option<String>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub out: String,
    #[serde(default = "default_prune_report")]
    pub report: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    File {
        labels: String,
        #[serde(default)]
        annotator: Option<String>,
    },
    Http(HttpBackendConfig),
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotateStage {
    pub corpus: String,
    /// Annotate a seeded sample of this many documents instead of all.
    #[serde(default)]
    pub sample: Option<usize>,
    #[serde(default)]
    pub prompt: Option<String>,
    pub backend: BackendConfig,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    pub out: String,
}

fn default_holdout() -> f64 {
    0.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFilterStage {
    pub labels: String,
    pub corpus: String,
    /// Defaults to the standard hyperparameters seeded with the global seed.
    #[serde(default)]
    pub hyperparams: Option<FilterHyperparams>,
    #[serde(default = "default_holdout")]
    pub holdout_fraction: f64,
    pub out: String,
    #[serde(default)]
    pub holdout_out: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateStage {
    pub model: String,
    pub labels: String,
    pub corpus: String,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterStage {
    pub model: String,
    pub corpus: String,
    pub keep_token_fraction: f64,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitStage {
    pub observations: String,
    /// Defaults to every benchmark in the observations file.
    #[serde(default)]
    pub benchmarks: Option<Vec<String>>,
    pub out_dir: String,
}

fn default_domain() -> [f64; 2] {
    [0.05, 0.6]
}

fn default_step() -> f64 {
    0.001
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeStage {
    pub fits: Vec<String>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    #[serde(default = "default_domain")]
    pub domain: [f64; 2],
    #[serde(default = "default_step")]
    pub step: f64,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixStage {
    pub ratios: BTreeMap<MixClass, f64>,
    pub total_token_budget: u64,
    /// Optimum file whose `x` replaces the agent share; the remaining
    /// classes split the rest in proportion to their ratios.
    #[serde(default)]
    pub agent_ratio_from: Option<String>,
    pub pools: BTreeMap<MixClass, String>,
    #[serde(default)]
    pub rng_seed: Option<u64>,
    pub out: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub workspace: String,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub shard_docs: Option<usize>,
    pub stages: Vec<Stage>,
    #[serde(default)]
    pub stats: Option<StatsStage>,
    #[serde(default)]
    pub ingest: Option<IngestStage>,
    #[serde(default)]
    pub frontier: Option<FrontierStage>,
    #[serde(default)]
    pub embed: Option<EmbedStage>,
    #[serde(default)]
    pub retrieve: Option<RetrieveStage>,
    #[serde(default)]
    pub prune: Option<PruneStage>,
    #[serde(default)]
    pub annotate: Option<AnnotateStage>,
    #[serde(default)]
    pub train_filter: Option<TrainFilterStage>,
    #[serde(default)]
    pub evaluate: Option<EvaluateStage>,
    #[serde(default)]
    pub filter: Option<FilterStage>,
    #[serde(default)]
    pub fit: Option<FitStage>,
    #[serde(default)]
    pub optimize: Option<OptimizeStage>,
    #[serde(default)]
    pub mix: Option<MixStage>,
}

/// A parsed config together with the directory its relative paths resolve
/// against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: PipelineConfig,
    pub base_dir: PathBuf,
    pub config_sha256: String,
}

impl LoadedConfig {
    pub fn workspace(&self) -> PathBuf {
        self.base_dir.join(&self.config.workspace)
    }

    /// Resolve an input reference: `@name` inside the workspace, anything
    /// else relative to the config directory.
    pub fn input(&self, raw: &str) -> PathBuf {
        match raw.strip_prefix('@') {
            Some(rest) => self.workspace().join(rest),
            None => self.base_dir.join(raw),
        }
    }

    pub fn output(&self, raw: &str) -> PathBuf {
        self.workspace().join(raw.strip_prefix('@').unwrap_or(raw))
    }
}

/// Set `dotted.path` in a JSON document. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), PipelineError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::config(assignment, "override must look like path=value"))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize =
                    part.parse().map_err(|_| PipelineError::config(path, format!("`{part}` is not an array index")))?;
                let len = items.len();
                let slot =
                    items.get_mut(idx).ok_or_else(|| PipelineError::config(path, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(PipelineError::config(path, format!("`{part}` is not inside an object or array"))),
        };
    }
    Ok(())
}

/// Read, override, parse and validate a pipeline config.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<LoadedConfig, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::config("<file>", format!("{}: {e}", path.display())))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| PipelineError::config("<root>", e))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let canonical = serde_json::to_string(&doc).expect("json value serializes");
    let config: PipelineConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let field = e.path().to_string();
        PipelineError::config(field, e.into_inner())
    })?;
    let base_dir = path.parent().filter(|p| !p.as_os_str().is_empty()).map(Path::to_path_buf).unwrap_or_else(|| ".".into());
    let loaded = LoadedConfig { config, base_dir, config_sha256: sha256_hex(canonical.as_bytes()) };
    validate(&loaded)?;
    Ok(loaded)
}

struct Io {
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

fn required<T>(block: &Option<T>, stage: Stage) -> Result<&T, PipelineError> {
    block.as_ref().ok_or_else(|| PipelineError::config(stage.block(), format!("stage `{stage}` is enabled but has no parameter block")))
}

fn stage_io(cfg: &PipelineConfig, stage: Stage) -> Result<Io, PipelineError> {
    let b = stage.block();
    let f = |name: &str| format!("{b}.{name}");
    let mut io = Io { inputs: Vec::new(), outputs: Vec::new() };
    match stage {
        Stage::Stats => {
            let s = required(&cfg.stats, stage)?;
            io.inputs.push((f("corpus"), s.corpus.clone()));
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Ingest => {
            let s = required(&cfg.ingest, stage)?;
            io.inputs.push((f("manifest"), s.manifest.clone()));
            if let Some(d) = &s.base_dir {
                io.inputs.push((f("base_dir"), d.clone()));
            }
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Frontier => {
            let s = required(&cfg.frontier, stage)?;
            io.inputs.push((f("seeds"), s.seeds.clone()));
            io.inputs.push((f("graph"), s.graph.clone()));
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Embed => {
            let s = required(&cfg.embed, stage)?;
            for (i, j) in s.jobs.iter().enumerate() {
                io.inputs.push((f(&format!("jobs[{i}].corpus")), j.corpus.clone()));
                io.outputs.push((f(&format!("jobs[{i}].out")), j.out.clone()));
            }
        }
        Stage::Retrieve => {
            let s = required(&cfg.retrieve, stage)?;
            io.inputs.push((f("seeds"), s.seeds.clone()));
            io.inputs.push((f("candidates"), s.candidates.clone()));
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Prune => {
            let s = required(&cfg.prune, stage)?;
            io.inputs.push((f("corpus"), s.corpus.clone()));
            io.inputs.push((f("embeddings"), s.embeddings.clone()));
            if let Some(h) = &s.hits {
                io.inputs.push((f("hits"), h.clone()));
            }
            io.outputs.push((f("out"), s.out.clone()));
            io.outputs.push((f("report"), s.report.clone()));
        }
        Stage::Annotate => {
            let s = required(&cfg.annotate, stage)?;
            io.inputs.push((f("corpus"), s.corpus.clone()));
            if let Some(p) = &s.prompt {
                io.inputs.push((f("prompt"), p.clone()));
            }
            if let BackendConfig::File { labels, .. } = &s.backend {
                io.inputs.push((f("backend.labels"), labels.clone()));
            }
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::TrainFilter => {
            let s = required(&cfg.train_filter, stage)?;
            io.inputs.push((f("labels"), s.labels.clone()));
            io.inputs.push((f("corpus"), s.corpus.clone()));
            io.outputs.push((f("out"), s.out.clone()));
            if let Some(h) = &s.holdout_out {
                io.outputs.push((f("holdout_out"), h.clone()));
            }
        }
        Stage::Evaluate => {
            let s = required(&cfg.evaluate, stage)?;
            io.inputs.push((f("model"), s.model.clone()));
            io.inputs.push((f("labels"), s.labels.clone()));
            io.inputs.push((f("corpus"), s.corpus.clone()));
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Filter => {
            let s = required(&cfg.filter, stage)?;
            io.inputs.push((f("model"), s.model.clone()));
            io.inputs.push((f("corpus"), s.corpus.clone()));
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Fit => {
            let s = required(&cfg.fit, stage)?;
            io.inputs.push((f("observations"), s.observations.clone()));
            io.outputs.push((f("out_dir"), s.out_dir.clone()));
        }
        Stage::Optimize => {
            let s = required(&cfg.optimize, stage)?;
            for (i, p) in s.fits.iter().enumerate() {
                io.inputs.push((f(&format!("fits[{i}]")), p.clone()));
            }
            io.outputs.push((f("out"), s.out.clone()));
        }
        Stage::Mix => {
            let s = required(&cfg.mix, stage)?;
            if let Some(p) = &s.agent_ratio_from {
                io.inputs.push((f("agent_ratio_from"), p.clone()));
            }
            for (c, p) in &s.pools {
                io.inputs.push((f(&format!("pools.{c}")), p.clone()));
            }
            io.outputs.push((f("out"), s.out.clone()));
        }
    }
    Ok(io)
}

fn normalize(raw: &str) -> PathBuf {
    Path::new(raw.strip_prefix('@').unwrap_or(raw)).components().collect()
}

fn validate(loaded: &LoadedConfig) -> Result<(), PipelineError> {
    let cfg = &loaded.config;
    if cfg.stages.is_empty() {
        return Err(PipelineError::config("stages", "no stages enabled"));
    }
    for (i, pair) in cfg.stages.windows(2).enumerate() {
        if pair[1] <= pair[0] {
            return Err(PipelineError::config(
                format!("stages[{}]", i + 1),
                format!("`{}` cannot follow `{}`; stages run in pipeline order without repeats", pair[1], pair[0]),
            ));
        }
    }
    if cfg.workers == Some(0) {
        return Err(PipelineError::config("workers", "must be positive"));
    }
    if cfg.shard_docs == Some(0) {
        return Err(PipelineError::config("shard_docs", "must be positive"));
    }
    check_values(cfg)?;
    let mut produced: Vec<PathBuf> = Vec::new();
    for stage in &cfg.stages {
        let io = stage_io(cfg, *stage)?;
        for (field, raw) in &io.inputs {
            let path = loaded.input(raw);
            if raw.starts_with('@') {
                let want = normalize(raw);
                let upstream = produced.iter().any(|p| want.starts_with(p));
                if !upstream && !path.exists() {
                    return Err(PipelineError::config(
                        field.as_str(),
                        format!("`{raw}` is neither produced by an earlier stage nor present in the workspace"),
                    ));
                }
            } else if !path.exists() {
                return Err(PipelineError::config(field.as_str(), format!("input {} does not exist", path.display())));
            }
        }
        for (field, raw) in &io.outputs {
            if raw.is_empty() || Path::new(raw.trim_start_matches('@')).is_absolute() {
                return Err(PipelineError::config(field.as_str(), "outputs must be non-empty workspace-relative paths"));
            }
            produced.push(normalize(raw));
        }
    }
    Ok(())
}

/// Range checks on scalar settings, so a bad value fails at load time and
/// not halfway through a run.
fn check_values(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let fail = |field: &str, message: String| Err(PipelineError::config(field, message));
    let unit = |v: f64| v > 0.0 && v <= 1.0;
    if let Some(b) = &cfg.frontier {
        if b.levels == 0 {
            return fail("frontier.levels", "must be at least 1".into());
        }
    }
    if let Some(b) = &cfg.embed {
        if let Err(e) = b.embedder.validate() {
            return fail("embed.embedder", e.to_string());
        }
    }
    if let Some(b) = &cfg.retrieve {
        if b.k == 0 {
            return fail("retrieve.k", "must be at least 1".into());
        }
    }
    if let Some(b) = &cfg.prune {
        if !unit(b.threshold) {
            return fail("prune.threshold", format!("{} is outside (0, 1]", b.threshold));
        }
    }
    if let Some(b) = &cfg.annotate {
        if b.concurrency == 0 {
            return fail("annotate.concurrency", "must be at least 1".into());
        }
        if b.sample == Some(0) {
            return fail("annotate.sample", "must be at least 1".into());
        }
    }
    if let Some(b) = &cfg.train_filter {
        if !(0.0..1.0).contains(&b.holdout_fraction) {
            return fail("train_filter.holdout_fraction", format!("{} is outside [0, 1)", b.holdout_fraction));
        }
        if let Some(Err(e)) = b.hyperparams.as_ref().map(FilterHyperparams::validate) {
            return fail("train_filter.hyperparams", e.to_string());
        }
    }
    if let Some(b) = &cfg.filter {
        if !unit(b.keep_token_fraction) {
            return fail("filter.keep_token_fraction", format!("{} is outside (0, 1]", b.keep_token_fraction));
        }
    }
    if let Some(b) = &cfg.optimize {
        let [lo, hi] = b.domain;
        if !(lo > 0.0 && lo < hi && hi <= 1.0) {
            return fail("optimize.domain", format!("[{lo}, {hi}] must satisfy 0 < lo < hi <= 1"));
        }
        if !(b.step > 0.0 && b.step <= (hi - lo) / 10.0) {
            return fail("optimize.step", format!("{} must lie in (0, (hi - lo) / 10]", b.step));
        }
        if let Some(w) = &b.weights {
            if w.len() != b.fits.len() {
                return fail("optimize.weights", format!("{} weights for {} fits", w.len(), b.fits.len()));
            }
            if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return fail("optimize.weights", "weights must be positive".into());
            }
        }
    }
    if let Some(b) = &cfg.mix {
        if b.total_token_budget == 0 {
            return fail("mix.total_token_budget", "must be positive".into());
        }
        if let Some((c, r)) = b.ratios.iter().find(|(_, r)| !(r.is_finite() && **r >= 0.0)) {
            return fail(&format!("mix.ratios.{c}"), format!("{r} is not a non-negative ratio"));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub field: String,
    pub path: String,
    pub sha256: String,
    pub files: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: String,
    pub duration_ms: u64,
    pub inputs: Vec<ArtifactRecord>,
    pub outputs: Vec<ArtifactRecord>,
    pub stats: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub forge_version: String,
    pub config_sha256: String,
    pub rng_seed: u64,
    pub workers: usize,
    pub parallel: bool,
    pub workspace: String,
    pub status: String,
    pub stages: Vec<StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<Stage>,
}

impl RunReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// `(stage, output path, sha256)` for every recorded output.
    pub fn output_hashes(&self) -> Vec<(Stage, String, String)> {
        self.stages
            .iter()
            .flat_map(|s| s.outputs.iter().map(move |o| (s.stage, o.path.clone(), o.sha256.clone())))
            .collect()
    }
}

/// Content hash of a file, or of a directory tree as the hash of its
/// sorted `(relative path, file hash)` listing.
pub fn hash_artifact(path: &Path) -> std::io::Result<(String, usize)> {
    if path.is_file() {
        return Ok((sha256_hex(&fs::read(path)?), 1));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut listing = String::new();
    for rel in &files {
        let digest = sha256_hex(&fs::read(path.join(rel))?);
        listing.push_str(&format!("{}\0{digest}\n", rel.to_string_lossy()));
    }
    Ok((sha256_hex(listing.as_bytes()), files.len()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            out.push(path.strip_prefix(root).expect("walk stays under root").to_path_buf());
        }
    }
    Ok(())
}

fn record(loaded: &LoadedConfig, field: &str, raw: &str, output: bool) -> StageResult<ArtifactRecord> {
    let path = if output { loaded.output(raw) } else { loaded.input(raw) };
    let (sha256, files) = hash_artifact(&path).map_err(|e| format!("hashing {}: {e}", path.display()))?;
    let shown = if output && !raw.starts_with('@') { format!("@{raw}") } else { raw.to_string() };
    Ok(ArtifactRecord { field: field.to_string(), path: shown, sha256, files })
}

/// Worker count from `FORGE_WORKERS`, then the config, then the default pool.
pub fn resolve_workers(config: Option<usize>) -> Result<Option<usize>, PipelineError> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(PipelineError::config(WORKERS_ENV, format!("`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(config),
    }
}

/// Run every enabled stage in order and write the run report to the
/// workspace. A failing stage stops the run; the report written up to that
/// point is attached to the error.
pub fn run_pipeline(loaded: &LoadedConfig) -> Result<RunReport, PipelineError> {
    let cfg = &loaded.config;
    if let Some(n) = resolve_workers(cfg.workers)? {
        par::configure_workers(n);
    }
    let ws = loaded.workspace();
    fs::create_dir_all(&ws).map_err(|e| PipelineError::Report { path: ws.clone(), message: e.to_string() })?;
    let mut report = RunReport {
        forge_version: crate::VERSION.to_string(),
        config_sha256: loaded.config_sha256.clone(),
        rng_seed: cfg.rng_seed,
        workers: par::current_workers(),
        parallel: par::is_parallel(),
        workspace: cfg.workspace.clone(),
        status: "running".into(),
        stages: Vec::new(),
        failed_stage: None,
    };

    for stage in &cfg.stages {
        let started = Instant::now();
        log::info!("stage {stage} starting");
        let outcome = run_stage(loaded, *stage);
        let duration_ms = started.elapsed().as_millis() as u64;
        match outcome {
            Ok(sr) => {
                log::info!("stage {stage} finished in {duration_ms} ms");
                report.stages.push(StageReport { duration_ms, ..sr });
            }
            Err(e) => {
                let message = e.to_string();
                log::error!("stage {stage} failed: {message}");
                report.stages.push(StageReport {
                    stage: *stage,
                    status: "failed".into(),
                    duration_ms,
                    inputs: Vec::new(),
                    outputs: Vec::new(),
                    stats: Value::Null,
                    error: Some(message.clone()),
                });
                report.status = "failed".into();
                report.failed_stage = Some(*stage);
                write_report(&ws, &report)?;
                return Err(PipelineError::Stage { stage: *stage, message, report: Box::new(report) });
            }
        }
    }
    report.status = "ok".into();
    write_report(&ws, &report)?;
    Ok(report)
}

fn write_report(ws: &Path, report: &RunReport) -> Result<(), PipelineError> {
    let path = ws.join(REPORT_FILE);
    let text = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    fs::write(&path, text).map_err(|e| PipelineError::Report { path, message: e.to_string() })
}

fn run_stage(loaded: &LoadedConfig, stage: Stage) -> StageResult<StageReport> {
    let io = stage_io(&loaded.config, stage)?;
    let mut inputs = Vec::new();
    for (field, raw) in &io.inputs {
        let path = loaded.input(raw);
        if !path.exists() {
            return Err(format!("input `{field}` = {} is missing", path.display()).into());
        }
        inputs.push(record(loaded, field, raw, false)?);
    }
    let stats = execute(loaded, stage)?;
    let mut outputs = Vec::new();
    for (field, raw) in &io.outputs {
        outputs.push(record(loaded, field, raw, true)?);
    }
    Ok(StageReport { stage, status: "ok".into(), duration_ms: 0, inputs, outputs, stats, error: None })
}

fn write_json(path: &Path, value: &impl Serialize) -> StageResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Corpus outputs are directories of shards named after the directory.
pub fn corpus_prefix(dir: &Path) -> PathBuf {
    let stem = dir.file_name().map(|n| n.to_os_string()).unwrap_or_else(|| "corpus".into());
    dir.join(stem)
}

fn write_corpus_dir(loaded: &LoadedConfig, raw: &str, docs: &[Document]) -> StageResult<usize> {
    let dir = loaded.output(raw);
    if dir.exists() {
        fs::remove_dir_all(&dir)?;
    }
    let shards = write_corpus(&corpus_prefix(&dir), docs, loaded.config.shard_docs.unwrap_or(DEFAULT_SHARD_DOCS))?;
    Ok(shards.len())
}

/// Seeded sample of `n` documents, returned in id order.
pub fn seeded_sample(docs: Vec<Document>, n: usize, seed: u64) -> Vec<Document> {
    let mut docs = docs;
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    if n >= docs.len() {
        return docs;
    }
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ SAMPLE_SALT)));
    docs.truncate(n);
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    docs
}

/// One label per document: the lexicographically first annotator wins.
fn one_label_per_doc(samples: Vec<LabeledSample>) -> BTreeMap<String, Label> {
    let mut best: BTreeMap<String, (String, Label)> = BTreeMap::new();
    for s in samples {
        match best.get(&s.doc_id) {
            Some((a, _)) if *a <= s.annotator => {}
            _ => {
                best.insert(s.doc_id, (s.annotator, s.label));
            }
        }
    }
    best.into_iter().map(|(id, (_, l))| (id, l)).collect()
}

fn texts_for<'a>(
    labels: &BTreeMap<String, Label>,
    docs: &'a BTreeMap<String, Document>,
) -> StageResult<Vec<(&'a str, Label)>> {
    labels
        .iter()
        .map(|(id, l)| {
            docs.get(id)
                .map(|d| (d.text.as_str(), *l))
                .ok_or_else(|| format!("labelled document `{id}` is not in the corpus").into())
        })
        .collect()
}

fn in_holdout(doc_id: &str, fraction: f64, seed: u64) -> bool {
    let h = splitmix64(hash_str(doc_id, seed ^ SPLIT_SALT));
    ((h % 1_000_000) as f64) < fraction * 1_000_000.0
}

fn by_id(docs: Vec<Document>) -> BTreeMap<String, Document> {
    docs.into_iter().map(|d| (d.id.clone(), d)).collect()
}

fn execute(loaded: &LoadedConfig, stage: Stage) -> StageResult<Value> {
    let cfg = &loaded.config;
    let seed = cfg.rng_seed;
    match stage {
        Stage::Stats => {
            let s = cfg.stats.as_ref().expect("validated");
            let docs = read_corpus(&loaded.input(&s.corpus))?;
            let stats = compute_stats(&docs)?.to_json();
            write_json(&loaded.output(&s.out), &stats)?;
            Ok(stats)
        }
        Stage::Ingest => {
            let s = cfg.ingest.as_ref().expect("validated");
            let manifest = loaded.input(&s.manifest);
            let registry = load_manifest(&manifest)?;
            let base = match &s.base_dir {
                Some(d) => loaded.input(d),
                None => manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let tokenizer = s.tokenizer.unwrap_or_default().build();
            let outcome = ingest_sources(&registry, &base, tokenizer.as_ref())?;
            let shards = write_corpus_dir(loaded, &s.out, &outcome.docs)?;
            let stats = compute_stats(&outcome.docs)?;
            Ok(json!({
                "sources": registry.len(),
                "remote_sources": outcome.remote_sources,
                "per_source_docs": outcome.per_source_docs,
                "shards": shards,
                "corpus": stats.to_json(),
            }))
        }
        Stage::Frontier => {
            let s = cfg.frontier.as_ref().expect("validated");
            let seeds = load_seed_urls(&loaded.input(&s.seeds))?;
            let graph = load_link_graph(&loaded.input(&s.graph))?;
            let report = plan_frontier(&seeds, &graph, s.levels, &s.keywords, s.filter_every_level)?;
            write_json(&loaded.output(&s.out), &report)?;
            Ok(json!({
                "level_sizes": report.level_sizes,
                "rejected": report.rejected,
                "doc_urls": report.doc_urls.len(),
            }))
        }
        Stage::Embed => {
            let s = cfg.embed.as_ref().expect("validated");
            let mut counts = Vec::new();
            for job in &s.jobs {
                let docs = read_corpus(&loaded.input(&job.corpus))?;
                let vectors = embed_corpus(&docs, &s.embedder)?;
                write_embeddings(&loaded.output(&job.out), vectors.iter())?;
                let zero = vectors.values().filter(|v| v.is_zero()).count();
                counts.push(json!({"corpus": job.corpus, "vectors": vectors.len(), "zero_vectors": zero}));
            }
            Ok(json!({"dims": s.embedder.dims, "jobs": counts}))
        }
        Stage::Retrieve => {
            let s = cfg.retrieve.as_ref().expect("validated");
            let seeds = load_external_embeddings(&loaded.input(&s.seeds))?;
            let candidates = load_external_embeddings(&loaded.input(&s.candidates))?;
            let hits = retrieve_top_k(&seeds, &candidates, s.k)?;
            write_hits(&loaded.output(&s.out), &hits)?;
            Ok(json!({
                "seeds": seeds.len(),
                "candidates": candidates.len(),
                "hits": hits.len(),
                "max_score": hits.first().map(|h| h.score),
                "min_score": hits.last().map(|h| h.score),
            }))
        }
        Stage::Prune => {
            let s = cfg.prune.as_ref().expect("validated");
            let docs = by_id(read_corpus(&loaded.input(&s.corpus))?);
            let all = load_external_embeddings(&loaded.input(&s.embeddings))?;
            let hits = match &s.hits {
                Some(h) => Some(read_hits(&loaded.input(h))?),
                None => None,
            };
            let scope = match &hits {
                Some(hits) => {
                    if let Some(h) = hits.iter().find(|h| !all.contains_key(&h.candidate_id)) {
                        return Err(format!("hit `{}` has no embedding", h.candidate_id).into());
                    }
                    select(&all, hits.iter().map(|h| &h.candidate_id))
                }
                None => all,
            };
            let pruned = prune_redundant(&scope, s.threshold)?;
            let hit_by_id: BTreeMap<&str, _> =
                hits.iter().flatten().map(|h| (h.candidate_id.as_str(), h)).collect();
            let mut kept = Vec::with_capacity(pruned.retained_ids.len());
            for id in &pruned.retained_ids {
                let mut doc = docs.get(id).cloned().ok_or_else(|| format!("embedded document `{id}` is not in the corpus"))?;
                if let Some(h) = hit_by_id.get(id.as_str()) {
                    doc.meta.insert("retrieval_score".into(), h.score.to_string());
                    doc.meta.insert("best_seed".into(), h.best_seed_id.clone());
                }
                kept.push(doc);
            }
            write_corpus_dir(loaded, &s.out, &kept)?;
            write_json(&loaded.output(&s.report), &pruned)?;
            Ok(json!({
                "considered": scope.len(),
                "retained": pruned.retained_ids.len(),
                "removed": pruned.removed_pairs.len(),
                "threshold": s.threshold,
            }))
        }
        Stage::Annotate => {
            let s = cfg.annotate.as_ref().expect("validated");
            let mut docs = read_corpus(&loaded.input(&s.corpus))?;
            if let Some(n) = s.sample {
                docs = seeded_sample(docs, n, seed);
            }
            let prompt = match &s.prompt {
                Some(p) => PromptTemplate::load(&loaded.input(p))?,
                None => PromptTemplate::annotation(ANNOTATION_PROMPT)?,
            };
            let backend: Box<dyn AnnotationBackend> = match &s.backend {
                BackendConfig::File { labels, annotator } => Box::new(FileBackend::from_labels_file(
                    annotator.clone().unwrap_or_else(|| "file".into()),
                    &loaded.input(labels),
                )?),
                BackendConfig::Http(h) => Box::new(HttpBackend::new(h.clone())),
            };
            let outcome = annotate_batch(&docs, backend.as_ref(), &prompt, s.concurrency);
            if outcome.samples.is_empty() {
                let reason = outcome.failures.first().map(|f| f.1.clone()).unwrap_or_else(|| "no verdicts".into());
                return Err(format!("no document was labelled ({reason})").into());
            }
            write_labels(&loaded.output(&s.out), &outcome.samples)?;
            let agent = outcome.samples.iter().filter(|x| x.label == Label::Agent).count();
            Ok(json!({
                "requested": docs.len(),
                "labelled": outcome.samples.len(),
                "agent": agent,
                "general": outcome.samples.len() - agent,
                "unlabelled": outcome.unlabeled.len(),
                "failures": outcome.failures.len(),
            }))
        }
        Stage::TrainFilter => {
            let s = cfg.train_filter.as_ref().expect("validated");
            if !(0.0..1.0).contains(&s.holdout_fraction) {
                return Err(format!("holdout_fraction {} must lie in [0, 1)", s.holdout_fraction).into());
            }
            let labels = one_label_per_doc(read_labels(&loaded.input(&s.labels))?);
            let docs = by_id(read_corpus(&loaded.input(&s.corpus))?);
            let hp = s.hyperparams.clone().unwrap_or_else(|| FilterHyperparams { rng_seed: seed, ..Default::default() });
            let (holdout, train): (BTreeMap<_, _>, BTreeMap<_, _>) =
                labels.into_iter().partition(|(id, _)| in_holdout(id, s.holdout_fraction, seed));
            let mut samples = texts_for(&train, &docs)?;
            samples.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix64(seed ^ TRAIN_ORDER_SALT)));
            let model = train_filter(&samples, &hp)?;
            model.save(&loaded.output(&s.out))?;
            if let Some(h) = &s.holdout_out {
                let rows: Vec<LabeledSample> = holdout
                    .iter()
                    .map(|(id, l)| LabeledSample { doc_id: id.clone(), label: *l, annotator: "holdout".into() })
                    .collect();
                write_labels(&loaded.output(h), &rows)?;
            }
            Ok(json!({
                "train": samples.len(),
                "holdout": holdout.len(),
                "vocab": model.vocab().len(),
                "epoch_losses": model.epoch_losses(),
            }))
        }
        Stage::Evaluate => {
            let s = cfg.evaluate.as_ref().expect("validated");
            let model = NgramLinearClassifier::load(&loaded.input(&s.model))?;
            let labels = one_label_per_doc(read_labels(&loaded.input(&s.labels))?);
            let docs = by_id(read_corpus(&loaded.input(&s.corpus))?);
            let labelled = texts_for(&labels, &docs)?;
            let metrics = evaluate_filter(&model, &labelled)?;
            write_json(&loaded.output(&s.out), &metrics)?;
            Ok(serde_json::to_value(&metrics)?)
        }
        Stage::Filter => {
            let s = cfg.filter.as_ref().expect("validated");
            let model = NgramLinearClassifier::load(&loaded.input(&s.model))?;
            let docs = read_corpus_with(&loaded.input(&s.corpus), &crate::corpus::WhitespaceTokenizer)?;
            let total: u64 = docs.iter().map(|d| d.token_count).sum();
            let scores: Vec<f64> = {
                use par::*;
                docs.par_iter().map(|d| model.predict_score(&d.text)).collect()
            };
            let kept = filter_by_rank(docs.into_iter().zip(scores).collect(), s.keep_token_fraction)?;
            let kept_tokens: u64 = kept.iter().map(|d| d.token_count).sum();
            write_corpus_dir(loaded, &s.out, &kept)?;
            Ok(json!({
                "kept_docs": kept.len(),
                "kept_tokens": kept_tokens,
                "total_tokens": total,
                "kept_fraction": kept_tokens as f64 / total.max(1) as f64,
            }))
        }
        Stage::Fit => {
            let s = cfg.fit.as_ref().expect("validated");
            let obs = read_observations(&loaded.input(&s.observations))?;
            let names: Vec<String> = match &s.benchmarks {
                Some(b) => b.clone(),
                None => obs.iter().map(|o| o.benchmark.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
            };
            let dir = loaded.output(&s.out_dir);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            let mut fits = Vec::new();
            for name in &names {
                let curve = fit_benchmark(&obs, name)?;
                write_json(&dir.join(format!("{name}.json")), &curve)?;
                fits.push(serde_json::to_value(&curve)?);
            }
            Ok(json!({"fits": fits}))
        }
        Stage::Optimize => {
            let s = cfg.optimize.as_ref().expect("validated");
            let curves = s.fits.iter().map(|p| read_curve(&loaded.input(p))).collect::<Result<Vec<_>, _>>()?;
            let weights = s.weights.clone().unwrap_or_else(|| vec![1.0; curves.len()]);
            let opt = optimal_mix_ratio(&curves, &weights, (s.domain[0], s.domain[1]), s.step)?;
            let value = json!({
                "x": opt.x,
                "aggregate_loss": opt.aggregate_loss,
                "benchmarks": curves.iter().map(|c| c.benchmark.clone()).collect::<Vec<_>>(),
                "weights": weights,
                "domain": s.domain,
                "step": s.step,
            });
            write_json(&loaded.output(&s.out), &value)?;
            Ok(value)
        }
        Stage::Mix => {
            let s = cfg.mix.as_ref().expect("validated");
            let mut ratios = s.ratios.clone();
            if let Some(p) = &s.agent_ratio_from {
                let opt: MixOptimum = serde_json::from_str(&fs::read_to_string(loaded.input(p))?)?;
                ratios = with_agent_share(&ratios, opt.x)?;
            }
            let spec = MixSpec { ratios, total_token_budget: s.total_token_budget, rng_seed: s.rng_seed.unwrap_or(seed) };
            let mut pools = BTreeMap::new();
            for (class, raw) in &s.pools {
                pools.insert(*class, read_corpus(&loaded.input(raw))?);
            }
            let mut mixture = compose_mixture(&pools, &spec)?;
            let dir = loaded.output(&s.out);
            if dir.exists() {
                fs::remove_dir_all(&dir)?;
            }
            let shard_docs = cfg.shard_docs.unwrap_or(DEFAULT_SHARD_DOCS);
            mixture.write_shards(&corpus_prefix(&dir), shard_docs)?;
            mixture.manifest.save(&dir.join("manifest.json"))?;
            let written: Vec<Document> = read_corpus(&corpus_prefix(&dir))?;
            let check = verify_manifest(&mixture.manifest, &written)?;
            fs::write(dir.join("spec.json"), serde_json::to_string_pretty(&spec)? + "\n")?;
            Ok(json!({
                "spec": spec,
                "realized_tokens": mixture.manifest.realized_tokens,
                "shares": mixture.manifest.shares(),
                "docs": written.len(),
                "max_abs_deviation": check.max_abs_deviation,
            }))
        }
    }
}

/// Give the agent classes a combined share `x` and scale the other classes
/// to fill `1 - x` in proportion to their configured ratios.
pub fn with_agent_share(ratios: &BTreeMap<MixClass, f64>, x: f64) -> StageResult<BTreeMap<MixClass, f64>> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(format!("agent share {x} must lie in (0, 1]").into());
    }
    let is_agent = |c: &MixClass| matches!(c, MixClass::Agent | MixClass::AgentDoc | MixClass::AgentTraj);
    let agent_sum: f64 = ratios.iter().filter(|(c, _)| is_agent(c)).map(|(_, r)| r).sum();
    let rest_sum: f64 = ratios.iter().filter(|(c, _)| !is_agent(c)).map(|(_, r)| r).sum();
    if agent_sum <= 0.0 {
        return Err("agent_ratio_from needs a positive agent ratio to rescale".into());
    }
    Ok(ratios
        .iter()
        .map(|(c, r)| {
            let v = if is_agent(c) {
                x * r / agent_sum
            } else if rest_sum > 0.0 {
                (1.0 - x) * r / rest_sum
            } else {
                0.0
            };
            (*c, v)
        })
        .collect())
}
