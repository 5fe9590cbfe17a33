//! Seed-source registry, raw-source ingestion, and URL frontier expansion.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CorpusError, DataClass, Document, Tokenizer};
use crate::par::*;

pub const DEFAULT_DOC_KEYWORDS: [&str; 3] = ["doc", "guide", "reference"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("source `{0}` is already registered")]
    DuplicateSource(String),
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("{}:{line}: {message}", path.display())]
    AtLine { path: PathBuf, line: usize, message: String },
    #[error("source `{name}`: origin {} does not exist", origin.display())]
    MissingOrigin { name: String, origin: PathBuf },
    #[error("max_level must be at least 1")]
    InvalidLevel,
    #[error("keyword set is empty")]
    NoKeywords,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Documentation,
    Trajectory,
    Code,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceFormat {
    Dialog,
    React,
    NlPlan,
    ApiSeq,
    Json,
    Qa,
    PlainText,
    Code,
}

impl SourceFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceFormat::Dialog => "dialog",
            SourceFormat::React => "react",
            SourceFormat::NlPlan => "nl_plan",
            SourceFormat::ApiSeq => "api_seq",
            SourceFormat::Json => "json",
            SourceFormat::Qa => "qa",
            SourceFormat::PlainText => "plain_text",
            SourceFormat::Code => "code",
        }
    }
}

/// One entry of a source manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub name: String,
    pub kind: SourceKind,
    pub format: SourceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_tokens: Option<u64>,
    /// A URL (remote, recorded only) or a path to a pre-fetched JSONL file,
    /// relative to the manifest.
    pub origin: String,
}

pub fn assign_data_class(spec: &SourceSpec) -> DataClass {
    match spec.kind {
        SourceKind::Documentation => DataClass::AgentDoc,
        SourceKind::Trajectory => DataClass::AgentTraj,
        SourceKind::Code => DataClass::Code,
        SourceKind::Text => DataClass::Text,
    }
}

/// Registered sources, in registration order.
#[derive(Debug, Clone, Default)]
pub struct SourceRegistry {
    sources: IndexMap<String, SourceSpec>,
}

impl SourceRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, spec: SourceSpec) -> Result<(), IngestError> {
        if self.sources.contains_key(&spec.name) {
            return Err(IngestError::DuplicateSource(spec.name));
        }
        self.sources.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SourceSpec> {
        self.sources.get(name)
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SourceSpec> {
        self.sources.values()
    }

    pub fn declared_tokens(&self, class: DataClass) -> u64 {
        self.iter()
            .filter(|s| assign_data_class(s) == class)
            .filter_map(|s| s.declared_tokens)
            .sum()
    }
}

/// Parse a manifest file (a JSON array of [`SourceSpec`]) into a registry.
pub fn load_manifest(path: &Path) -> Result<SourceRegistry, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let specs: Vec<SourceSpec> = serde_json::from_str(&text)
        .map_err(|e| IngestError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let mut registry = SourceRegistry::new();
    for spec in specs {
        registry.register(spec)?;
    }
    Ok(registry)
}

fn is_remote(origin: &str) -> bool {
    is_valid_url(origin)
}

#[derive(Debug, Deserialize)]
struct RawRecord {
    text: String,
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    url: Option<String>,
}

#[derive(Debug, Default)]
pub struct IngestOutcome {
    pub docs: Vec<Document>,
    /// Sources whose origin is a remote URL; registered but not fetched.
    pub remote_sources: Vec<String>,
    pub per_source_docs: IndexMap<String, usize>,
}

/// Read every local source of `registry` into documents.
///
/// Raw source files are JSON Lines with a required `text` and optional `id`
/// and `url`. Document ids are `<source>:<id>`, falling back to the
/// zero-based line index when the record has no id.
pub fn ingest_sources(
    registry: &SourceRegistry,
    base_dir: &Path,
    tokenizer: &dyn Tokenizer,
) -> Result<IngestOutcome, IngestError> {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for spec in registry.iter() {
        if is_remote(&spec.origin) {
            out.remote_sources.push(spec.name.clone());
            continue;
        }
        let path = base_dir.join(&spec.origin);
        if !path.is_file() {
            return Err(IngestError::MissingOrigin { name: spec.name.clone(), origin: path });
        }
        let class = assign_data_class(spec);
        let file = File::open(&path).map_err(|e| CorpusError::io(&path, e))?;
        let mut count = 0;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| CorpusError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |message: String| IngestError::AtLine { path: path.clone(), line: i + 1, message };
            let raw: RawRecord = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            let local_id = raw.id.unwrap_or_else(|| format!("{i:06}"));
            let id = format!("{}:{local_id}", spec.name);
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId(id).into());
            }
            let mut doc = Document {
                token_count: tokenizer.count(&raw.text),
                id,
                source_id: spec.name.clone(),
                data_class: class,
                text: raw.text,
                meta: Default::default(),
            };
            doc.meta.insert("format".into(), spec.format.as_str().into());
            if let Some(url) = raw.url {
                doc.meta.insert("url".into(), url);
            }
            out.docs.push(doc);
            count += 1;
        }
        out.per_source_docs.insert(spec.name.clone(), count);
    }
    Ok(out)
}

/// Absolute http(s) URL with a host.
pub fn is_valid_url(s: &str) -> bool {
    match url::Url::parse(s) {
        Ok(u) => matches!(u.scheme(), "http" | "https") && u.host_str().is_some_and(|h| !h.is_empty()),
        Err(_) => false,
    }
}

pub type LinkGraph = HashMap<String, Vec<String>>;

#[derive(Debug, Deserialize)]
struct LinkRecord {
    url: String,
    #[serde(default)]
    out: Vec<String>,
}

/// Load a link graph from JSON Lines `{"url": "...", "out": [...]}`.
/// Repeated `url` lines append to the same adjacency list.
pub fn load_link_graph(path: &Path) -> Result<LinkGraph, IngestError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut graph = LinkGraph::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LinkRecord = serde_json::from_str(&line).map_err(|e| IngestError::AtLine {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        graph.entry(rec.url).or_default().extend(rec.out);
    }
    Ok(graph)
}

/// Seed URLs from either a JSON array or one URL per line (`#` comments).
pub fn load_seed_urls(path: &Path) -> Result<Vec<String>, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .map_err(|e| IngestError::Format { path: path.to_path_buf(), message: e.to_string() });
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UrlFrontier {
    /// `levels[0]` is level 1 (the valid seeds).
    pub levels: Vec<BTreeSet<String>>,
    /// Malformed URLs dropped along the way (seeds and out-links).
    pub rejected: usize,
}

impl UrlFrontier {
    pub fn all_urls(&self) -> BTreeSet<String> {
        self.levels.iter().flatten().cloned().collect()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(BTreeSet::len).collect()
    }
}

/// Level-synchronous breadth-first expansion over a pre-fetched link graph.
///
/// Level 1 holds the valid seeds; level `k+1` holds the valid, previously
/// unseen out-links of level `k`. Expansion stops at `max_level` or when a
/// level comes up empty.
pub fn expand_url_frontier<S: AsRef<str>>(
    seeds: &[S],
    graph: &LinkGraph,
    max_level: usize,
) -> Result<UrlFrontier, IngestError> {
    expand_with(seeds, graph, max_level, |_| true)
}

fn expand_with<S: AsRef<str>>(
    seeds: &[S],
    graph: &LinkGraph,
    max_level: usize,
    keep: impl Fn(&str) -> bool,
) -> Result<UrlFrontier, IngestError> {
    if max_level == 0 {
        return Err(IngestError::InvalidLevel);
    }
    let mut rejected = 0;
    let mut level = BTreeSet::new();
    for seed in seeds {
        let seed = seed.as_ref().trim();
        if is_valid_url(seed) {
            if keep(seed) {
                level.insert(seed.to_string());
            }
        } else {
            rejected += 1;
        }
    }
    let mut seen: HashSet<String> = level.iter().cloned().collect();
    let mut levels = vec![level];

    while levels.len() < max_level {
        let current: Vec<&String> = levels.last().unwrap().iter().collect();
        let out_links: Vec<&[String]> = current
            .par_iter()
            .map(|u| graph.get(u.as_str()).map(Vec::as_slice).unwrap_or(&[]))
            .collect();
        let mut next = BTreeSet::new();
        for link in out_links.into_iter().flatten() {
            if seen.contains(link) {
                continue;
            }
            if !is_valid_url(link) {
                rejected += 1;
                continue;
            }
            seen.insert(link.clone());
            if keep(link) {
                next.insert(link.clone());
            }
        }
        if next.is_empty() {
            break;
        }
        levels.push(next);
    }
    Ok(UrlFrontier { levels, rejected })
}

fn normalized_keywords<S: AsRef<str>>(keywords: &[S]) -> Result<Vec<String>, IngestError> {
    let kws: Vec<String> = keywords
        .iter()
        .map(|k| k.as_ref().trim().to_lowercase())
        .filter(|k| !k.is_empty())
        .collect();
    if kws.is_empty() {
        return Err(IngestError::NoKeywords);
    }
    Ok(kws)
}

fn matches_any(url: &str, keywords: &[String]) -> bool {
    let lower = url.to_lowercase();
    keywords.iter().any(|k| lower.contains(k.as_str()))
}

/// URLs containing at least one keyword, case-insensitively.
pub fn filter_doc_urls<'a, I, S>(urls: I, keywords: &[S]) -> Result<BTreeSet<String>, IngestError>
where
    I: IntoIterator<Item = &'a String>,
    S: AsRef<str>,
{
    let kws = normalized_keywords(keywords)?;
    Ok(urls.into_iter().filter(|u| matches_any(u, &kws)).cloned().collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrontierReport {
    pub levels: Vec<BTreeSet<String>>,
    pub level_sizes: Vec<usize>,
    pub rejected: usize,
    pub keywords: Vec<String>,
    pub filter_every_level: bool,
    pub doc_urls: BTreeSet<String>,
}

/// Expansion plus keyword filtering. By default the keyword filter is a
/// final stage over all levels; with `filter_every_level` each level is
/// filtered before it is expanded.
pub fn plan_frontier<S: AsRef<str>, K: AsRef<str>>(
    seeds: &[S],
    graph: &LinkGraph,
    max_level: usize,
    keywords: &[K],
    filter_every_level: bool,
) -> Result<FrontierReport, IngestError> {
    let kws = normalized_keywords(keywords)?;
    let frontier = if filter_every_level {
        expand_with(seeds, graph, max_level, |u| matches_any(u, &kws))?
    } else {
        expand_url_frontier(seeds, graph, max_level)?
    };
    let doc_urls = filter_doc_urls(frontier.all_urls().iter(), &kws)?;
    Ok(FrontierReport {
        level_sizes: frontier.level_sizes(),
        levels: frontier.levels,
        rejected: frontier.rejected,
        keywords: kws,
        filter_every_level,
        doc_urls,
    })
}
