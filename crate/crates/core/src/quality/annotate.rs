//! Annotation client: prompt templates, backends, and verdict parsing.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Label, LabeledSample, QualityError};
use crate::corpus::{CorpusError, Document};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("no label for `{0}`")]
    NotFound(String),
    #[error("request failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
}

/// A prompt asset with a single `{placeholder}` for the document text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
    placeholder: String,
}

impl PromptTemplate {
    pub const DOCUMENT_PLACEHOLDER: &'static str = "{document}";

    pub fn new(text: impl Into<String>, placeholder: &str) -> Result<Self, QualityError> {
        let text = text.into();
        if !text.contains(placeholder) {
            return Err(QualityError::Prompt(format!("template has no `{placeholder}` placeholder")));
        }
        Ok(PromptTemplate { text, placeholder: placeholder.to_string() })
    }

    pub fn annotation(text: impl Into<String>) -> Result<Self, QualityError> {
        Self::new(text, Self::DOCUMENT_PLACEHOLDER)
    }

    pub fn load(path: &Path) -> Result<Self, QualityError> {
        let text = fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::annotation(text)
    }

    pub fn render(&self, document: &str) -> String {
        self.text.replace(&self.placeholder, document)
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}

/// The first word of `response` that is either "agent" or "general",
/// case-insensitively. Words are maximal alphanumeric runs.
pub fn parse_verdict(response: &str) -> Option<Label> {
    response
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .find_map(|w| {
            if w.eq_ignore_ascii_case("agent") {
                Some(Label::Agent)
            } else if w.eq_ignore_ascii_case("general") {
                Some(Label::General)
            } else {
                None
            }
        })
}

pub trait AnnotationBackend: Sync {
    /// Recorded as the `annotator` of every sample.
    fn name(&self) -> &str;

    /// Raw verdict text for one document.
    fn complete(&self, doc: &Document, prompt: &str) -> Result<String, BackendError>;
}

/// Precomputed labels keyed by document id.
#[derive(Debug, Clone)]
pub struct FileBackend {
    name: String,
    labels: HashMap<String, Label>,
}

impl FileBackend {
    pub fn new(name: impl Into<String>, labels: HashMap<String, Label>) -> Self {
        FileBackend { name: name.into(), labels }
    }

    /// Load a labels file. When it holds several annotators, the
    /// lexicographically first annotator's label wins for each document.
    pub fn from_labels_file(name: impl Into<String>, path: &Path) -> Result<Self, QualityError> {
        let mut by_doc: BTreeMap<String, (String, Label)> = BTreeMap::new();
        for s in read_labels(path)? {
            match by_doc.get(&s.doc_id) {
                Some((a, _)) if *a <= s.annotator => {}
                _ => {
                    by_doc.insert(s.doc_id.clone(), (s.annotator, s.label));
                }
            }
        }
        Ok(Self::new(name, by_doc.into_iter().map(|(k, (_, l))| (k, l)).collect()))
    }
}

impl AnnotationBackend for FileBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, doc: &Document, _prompt: &str) -> Result<String, BackendError> {
        self.labels
            .get(&doc.id)
            .map(|l| l.as_str().to_string())
            .ok_or_else(|| BackendError::NotFound(doc.id.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpBackendConfig {
    pub url: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_annotator")]
    pub annotator: String,
}

fn default_timeout_ms() -> u64 {
    30_000
}
fn default_retries() -> u32 {
    2
}
fn default_concurrency() -> usize {
    4
}
fn default_annotator() -> String {
    "http".into()
}

/// POSTs `{"prompt": "..."}` and reads `{"completion": "..."}`.
pub struct HttpBackend {
    cfg: HttpBackendConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    completion: String,
}

impl HttpBackend {
    pub fn new(cfg: HttpBackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .build()
            .into();
        HttpBackend { cfg, agent }
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.cfg
    }

    fn attempt(&self, prompt: &str) -> Result<String, String> {
        let mut resp = self
            .agent
            .post(&self.cfg.url)
            .send_json(CompletionRequest { prompt })
            .map_err(|e| e.to_string())?;
        let body: CompletionResponse = resp.body_mut().read_json().map_err(|e| e.to_string())?;
        Ok(body.completion)
    }
}

impl AnnotationBackend for HttpBackend {
    fn name(&self) -> &str {
        &self.cfg.annotator
    }

    fn complete(&self, _doc: &Document, prompt: &str) -> Result<String, BackendError> {
        let attempts = self.cfg.retries + 1;
        let mut last = String::new();
        for _ in 0..attempts {
            match self.attempt(prompt) {
                Ok(c) => return Ok(c),
                Err(e) => last = e,
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct AnnotationOutcome {
    /// Sorted by document id.
    pub samples: Vec<LabeledSample>,
    /// Documents whose response held no verdict.
    pub unlabeled: Vec<String>,
    /// Documents whose backend call failed, with the reason.
    pub failures: Vec<(String, String)>,
}

/// Annotate `docs` with at most `concurrency` requests in flight. Per-doc
/// failures are recorded and do not abort the batch.
pub fn annotate_batch(
    docs: &[Document],
    backend: &dyn AnnotationBackend,
    prompt: &PromptTemplate,
    concurrency: usize,
) -> AnnotationOutcome {
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, Result<String, BackendError>)>> = Mutex::new(Vec::with_capacity(docs.len()));
    let workers = concurrency.clamp(1, docs.len().max(1));
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= docs.len() {
                    break;
                }
                let rendered = prompt.render(&docs[i].text);
                let r = backend.complete(&docs[i], &rendered);
                results.lock().unwrap().push((i, r));
            });
        }
    });

    let mut results = results.into_inner().unwrap();
    results.sort_by(|a, b| docs[a.0].id.cmp(&docs[b.0].id));
    let mut out = AnnotationOutcome::default();
    for (i, r) in results {
        let id = docs[i].id.clone();
        match r {
            Ok(text) => match parse_verdict(&text) {
                Some(label) => out.samples.push(LabeledSample {
                    doc_id: id,
                    label,
                    annotator: backend.name().to_string(),
                }),
                None => out.unlabeled.push(id),
            },
            Err(e) => out.failures.push((id, e.to_string())),
        }
    }
    out
}

pub fn write_labels(path: &Path, samples: &[LabeledSample]) -> Result<(), QualityError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
    }
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in samples {
        writeln!(w, "{}", serde_json::to_string(s).expect("sample serializes")).map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))?;
    Ok(())
}

/// Read a labels file, rejecting a second label for the same
/// (doc_id, annotator) pair.
pub fn read_labels(path: &Path) -> Result<Vec<LabeledSample>, QualityError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |message: String| QualityError::AtLine { path: path.to_path_buf(), line: i + 1, message };
        let s: LabeledSample = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
        if !seen.insert((s.doc_id.clone(), s.annotator.clone())) {
            return Err(at(format!("second label for `{}` from `{}`", s.doc_id, s.annotator)));
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::DataClass;

    fn doc(id: &str, text: &str) -> Document {
        Document::new(id, "web", DataClass::AgentDoc, text)
    }

    #[test]
    fn verdict_parsing() {
        assert_eq!(parse_verdict("agent"), Some(Label::Agent));
        assert_eq!(parse_verdict("Category: GENERAL."), Some(Label::General));
        assert_eq!(parse_verdict("This is general text, not agent data"), Some(Label::General));
        assert_eq!(parse_verdict("[Agent] the page documents an API"), Some(Label::Agent));
        assert_eq!(parse_verdict("agents are mentioned"), None);
        assert_eq!(parse_verdict(""), None);
    }

    #[test]
    fn template_requires_placeholder() {
        assert!(PromptTemplate::annotation("no slot here").is_err());
        let t = PromptTemplate::annotation("Classify:\n{document}\nAnswer:").unwrap();
        assert_eq!(t.render("GET /x"), "Classify:\nGET /x\nAnswer:");
    }

    #[test]
    fn file_backend_lookup() {
        let labels: HashMap<String, Label> = [("a", Label::Agent), ("b", Label::General), ("c", Label::Agent)]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect();
        let backend = FileBackend::new("gold", labels);
        let prompt = PromptTemplate::annotation("{document}").unwrap();
        let docs = vec![doc("c", "x"), doc("a", "y"), doc("b", "z"), doc("missing", "w")];
        let out = annotate_batch(&docs, &backend, &prompt, 3);
        let got: Vec<(&str, Label)> = out.samples.iter().map(|s| (s.doc_id.as_str(), s.label)).collect();
        assert_eq!(got, vec![("a", Label::Agent), ("b", Label::General), ("c", Label::Agent)]);
        assert!(out.samples.iter().all(|s| s.annotator == "gold"));
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].0, "missing");
    }

    #[test]
    fn labels_file_round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let samples = vec![
            LabeledSample { doc_id: "a".into(), label: Label::Agent, annotator: "x".into() },
            LabeledSample { doc_id: "a".into(), label: Label::General, annotator: "y".into() },
        ];
        write_labels(&path, &samples).unwrap();
        assert_eq!(read_labels(&path).unwrap(), samples);
        let backend = FileBackend::from_labels_file("f", &path).unwrap();
        assert_eq!(backend.complete(&doc("a", ""), "").unwrap(), "agent");

        let dup = dir.path().join("dup.jsonl");
        fs::write(
            &dup,
            "{\"doc_id\":\"a\",\"label\":\"agent\",\"annotator\":\"x\"}\n{\"doc_id\":\"a\",\"label\":\"general\",\"annotator\":\"x\"}\n",
        )
        .unwrap();
        assert!(matches!(read_labels(&dup), Err(QualityError::AtLine { line: 2, .. })));
    }
}
