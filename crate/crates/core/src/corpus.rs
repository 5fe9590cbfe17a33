//! Canonical corpus record, token accounting, and sharded JSONL I/O.
//!
//! A corpus is a set of shard files named `<corpus>.<shard_index>.jsonl`
//! with the index zero-padded to five digits. Each line is one [`Document`]
//! object with exactly the fields `id`, `source_id`, `data_class`, `text`,
//! `token_count` and `meta`.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub const DEFAULT_SHARD_DOCS: usize = 10_000;

const RECORD_FIELDS: [&str; 6] = ["id", "source_id", "data_class", "text", "token_count", "meta"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("{}:{line}: {source}", path.display())]
    AtLine {
        path: PathBuf,
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no shards found for corpus `{}`", .0.display())]
    NoShards(PathBuf),
}

impl CorpusError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        CorpusError::Io { path: path.into(), source }
    }

    fn parse(field: &str, message: impl Into<String>) -> Self {
        CorpusError::Parse { field: field.to_string(), message: message.into() }
    }
}

/// The four corpus classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataClass {
    AgentDoc,
    AgentTraj,
    Code,
    Text,
}

impl DataClass {
    pub const ALL: [DataClass; 4] =
        [DataClass::AgentDoc, DataClass::AgentTraj, DataClass::Code, DataClass::Text];

    pub fn as_str(self) -> &'static str {
        match self {
            DataClass::AgentDoc => "agent_doc",
            DataClass::AgentTraj => "agent_traj",
            DataClass::Code => "code",
            DataClass::Text => "text",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_agent(self) -> bool {
        matches!(self, DataClass::AgentDoc | DataClass::AgentTraj)
    }
}

impl fmt::Display for DataClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DataClass {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DataClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| CorpusError::Validation(format!("unknown data_class `{s}`")))
    }
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source_id: String,
    pub data_class: DataClass,
    pub text: String,
    pub token_count: u64,
    pub meta: BTreeMap<String, String>,
}

impl Document {
    /// Build a document with its token count computed by the default
    /// tokenizer.
    pub fn new(
        id: impl Into<String>,
        source_id: impl Into<String>,
        data_class: DataClass,
        text: impl Into<String>,
    ) -> Self {
        let text = text.into();
        Document {
            id: id.into(),
            source_id: source_id.into(),
            data_class,
            token_count: count_tokens(&text),
            text,
            meta: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Serialize as one JSONL record (no trailing newline).
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("document serialization is infallible")
    }
}

/// Token counter used for budget accounting.
pub trait Tokenizer: Send + Sync {
    fn count(&self, text: &str) -> u64;
}

/// Each maximal run of non-whitespace characters is one token.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn count(&self, text: &str) -> u64 {
        text.split_whitespace().count() as u64
    }
}

/// Approximates subword tokenizers as `ceil(chars / chars_per_token)`.
#[derive(Debug, Clone, Copy)]
pub struct CharsPerTokenTokenizer {
    pub chars_per_token: u32,
}

impl Tokenizer for CharsPerTokenTokenizer {
    fn count(&self, text: &str) -> u64 {
        let chars = text.chars().count() as u64;
        chars.div_ceil(u64::from(self.chars_per_token.max(1)))
    }
}

/// Tokenizer selection as it appears in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerKind {
    #[default]
    Whitespace,
    CharsPerToken { chars_per_token: u32 },
}

impl TokenizerKind {
    pub fn build(self) -> Box<dyn Tokenizer> {
        match self {
            TokenizerKind::Whitespace => Box::new(WhitespaceTokenizer),
            TokenizerKind::CharsPerToken { chars_per_token } => {
                Box::new(CharsPerTokenTokenizer { chars_per_token })
            }
        }
    }
}

/// Count tokens with the default whitespace tokenizer.
pub fn count_tokens(text: &str) -> u64 {
    WhitespaceTokenizer.count(text)
}

/// Parse one JSONL record, using the default tokenizer for the
/// `token_count` check.
pub fn parse_document_record(line: &str) -> Result<Document, CorpusError> {
    parse_document_record_with(line, &WhitespaceTokenizer)
}

/// Parse one JSONL record. A missing `token_count` is recomputed; a present
/// one must agree with `tokenizer`.
pub fn parse_document_record_with(
    line: &str,
    tokenizer: &dyn Tokenizer,
) -> Result<Document, CorpusError> {
    let value: Value = serde_json::from_str(line)
        .map_err(|e| CorpusError::parse("<record>", format!("malformed JSON: {e}")))?;
    let Value::Object(obj) = value else {
        return Err(CorpusError::parse("<record>", "expected a JSON object"));
    };
    if let Some(extra) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
        return Err(CorpusError::parse(extra, "unknown field"));
    }

    let id = match obj.get("id") {
        None | Some(Value::Null) => {
            return Err(CorpusError::Validation("missing document id".into()));
        }
        Some(Value::String(s)) if s.is_empty() => {
            return Err(CorpusError::Validation("document id is empty".into()));
        }
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(CorpusError::parse("id", "expected a string")),
    };
    let source_id = required_str(&obj, "source_id")?;
    let data_class: DataClass = required_str(&obj, "data_class")?.parse()?;
    let text = required_str(&obj, "text")?;

    let computed = tokenizer.count(&text);
    let token_count = match obj.get("token_count") {
        None | Some(Value::Null) => computed,
        Some(v) => {
            let n = v
                .as_u64()
                .ok_or_else(|| CorpusError::parse("token_count", "expected a non-negative integer"))?;
            if n != computed {
                return Err(CorpusError::Validation(format!(
                    "document `{id}`: token_count {n} disagrees with tokenizer count {computed}"
                )));
            }
            n
        }
    };

    let mut meta = BTreeMap::new();
    match obj.get("meta") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (k, v) in m {
                let Value::String(s) = v else {
                    return Err(CorpusError::parse("meta", format!("value of `{k}` is not a string")));
                };
                meta.insert(k.clone(), s.clone());
            }
        }
        Some(_) => return Err(CorpusError::parse("meta", "expected an object")),
    }

    Ok(Document { id, source_id, data_class, text, token_count, meta })
}

fn required_str(obj: &Map<String, Value>, field: &str) -> Result<String, CorpusError> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(CorpusError::parse(field, "expected a string")),
        None => Err(CorpusError::parse(field, "missing")),
    }
}

/// Per-class document and token totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTotals {
    pub docs: u64,
    pub tokens: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorpusStats {
    per_class: [ClassTotals; 4],
}

impl CorpusStats {
    pub fn class(&self, class: DataClass) -> &ClassTotals {
        &self.per_class[class.index()]
    }

    pub fn tokens(&self, class: DataClass) -> u64 {
        self.class(class).tokens
    }

    pub fn docs(&self, class: DataClass) -> u64 {
        self.class(class).docs
    }

    pub fn total_tokens(&self) -> u64 {
        self.per_class.iter().map(|c| c.tokens).sum()
    }

    pub fn total_docs(&self) -> u64 {
        self.per_class.iter().map(|c| c.docs).sum()
    }

    pub fn add(&mut self, doc: &Document) {
        let slot = &mut self.per_class[doc.data_class.index()];
        slot.docs += 1;
        slot.tokens += doc.token_count;
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        for (mine, theirs) in self.per_class.iter_mut().zip(&other.per_class) {
            mine.docs += theirs.docs;
            mine.tokens += theirs.tokens;
        }
    }

    /// The stats report object written by `forge stats`.
    pub fn to_json(&self) -> Value {
        let per_class: Map<String, Value> = DataClass::ALL
            .iter()
            .map(|c| (c.as_str().to_string(), serde_json::to_value(self.class(*c)).unwrap()))
            .collect();
        serde_json::json!({
            "per_class": per_class,
            "total_docs": self.total_docs(),
            "total_tokens": self.total_tokens(),
        })
    }
}

/// Incremental stats with duplicate-id detection. Partial builders over
/// disjoint shards merge associatively.
#[derive(Debug, Default)]
pub struct StatsBuilder {
    stats: CorpusStats,
    seen: HashSet<String>,
}

impl StatsBuilder {
    pub fn push(&mut self, doc: &Document) -> Result<(), CorpusError> {
        if !self.seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id.clone()));
        }
        self.stats.add(doc);
        Ok(())
    }

    pub fn merge(mut self, other: StatsBuilder) -> Result<StatsBuilder, CorpusError> {
        let (mut big, small) = if self.seen.len() >= other.seen.len() {
            (std::mem::take(&mut self), other)
        } else {
            (other, self)
        };
        for id in small.seen {
            if big.seen.contains(&id) {
                return Err(CorpusError::DuplicateId(id));
            }
            big.seen.insert(id);
        }
        big.stats.merge(&small.stats);
        Ok(big)
    }

    pub fn finish(self) -> CorpusStats {
        self.stats
    }
}

pub fn compute_stats<'a, I>(docs: I) -> Result<CorpusStats, CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    let mut builder = StatsBuilder::default();
    for doc in docs {
        builder.push(doc)?;
    }
    Ok(builder.finish())
}

/// `<prefix>.<index>.jsonl` with a five-digit index.
pub fn shard_path(prefix: &Path, index: usize) -> PathBuf {
    let mut name = prefix
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.push_str(&format!(".{index:05}.jsonl"));
    prefix.with_file_name(name)
}

fn shard_stem(file_name: &str) -> Option<&str> {
    let base = file_name.strip_suffix(".jsonl")?;
    let (stem, index) = base.rsplit_once('.')?;
    (index.len() == 5 && index.bytes().all(|b| b.is_ascii_digit())).then_some(stem)
}

/// Resolve a corpus reference to its shard files, in shard order.
///
/// A directory resolves to every shard file inside it; a plain `.jsonl`
/// file resolves to itself; anything else is treated as a shard prefix.
pub fn resolve_shards(corpus: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut shards = Vec::new();
    if corpus.is_dir() {
        for entry in fs::read_dir(corpus).map_err(|e| CorpusError::io(corpus, e))? {
            let path = entry.map_err(|e| CorpusError::io(corpus, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if path.is_file() && shard_stem(name).is_some() {
                shards.push(path);
            }
        }
    } else if corpus.is_file() {
        shards.push(corpus.to_path_buf());
    } else {
        let stem = corpus.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        let parent = match corpus.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        if parent.is_dir() {
            for entry in fs::read_dir(&parent).map_err(|e| CorpusError::io(&parent, e))? {
                let path = entry.map_err(|e| CorpusError::io(&parent, e))?.path();
                let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                if shard_stem(name) == Some(stem) {
                    shards.push(path);
                }
            }
        }
    }
    if shards.is_empty() {
        return Err(CorpusError::NoShards(corpus.to_path_buf()));
    }
    shards.sort();
    Ok(shards)
}

/// Read every document of one shard file.
pub fn read_shard(path: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<Document>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let doc = parse_document_record_with(&line, tokenizer).map_err(|e| CorpusError::AtLine {
            path: path.to_path_buf(),
            line: i + 1,
            source: Box::new(e),
        })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Read a whole corpus (all shards, in order) and reject duplicate ids.
pub fn read_corpus(corpus: &Path) -> Result<Vec<Document>, CorpusError> {
    read_corpus_with(corpus, &WhitespaceTokenizer)
}

pub fn read_corpus_with(corpus: &Path, tokenizer: &dyn Tokenizer) -> Result<Vec<Document>, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for shard in resolve_shards(corpus)? {
        for doc in read_shard(&shard, tokenizer)? {
            if !seen.insert(doc.id.clone()) {
                return Err(CorpusError::DuplicateId(doc.id));
            }
            docs.push(doc);
        }
    }
    Ok(docs)
}

/// Writes documents into consecutive shards of at most `max_docs` records.
pub struct ShardWriter {
    prefix: PathBuf,
    max_docs: usize,
    current: Option<BufWriter<File>>,
    in_current: usize,
    written: Vec<PathBuf>,
}

impl ShardWriter {
    pub fn new(prefix: impl Into<PathBuf>, max_docs: usize) -> Result<Self, CorpusError> {
        let prefix = prefix.into();
        if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| CorpusError::io(parent, e))?;
        }
        Ok(ShardWriter { prefix, max_docs: max_docs.max(1), current: None, in_current: 0, written: Vec::new() })
    }

    pub fn write(&mut self, doc: &Document) -> Result<(), CorpusError> {
        if self.current.is_none() || self.in_current == self.max_docs {
            self.rotate()?;
        }
        let path = self.written.last().expect("rotate opened a shard").clone();
        let out = self.current.as_mut().expect("rotate opened a shard");
        writeln!(out, "{}", doc.to_json_line()).map_err(|e| CorpusError::io(path, e))?;
        self.in_current += 1;
        Ok(())
    }

    fn rotate(&mut self) -> Result<(), CorpusError> {
        self.flush_current()?;
        let path = shard_path(&self.prefix, self.written.len());
        let file = File::create(&path).map_err(|e| CorpusError::io(&path, e))?;
        self.current = Some(BufWriter::new(file));
        self.in_current = 0;
        self.written.push(path);
        Ok(())
    }

    fn flush_current(&mut self) -> Result<(), CorpusError> {
        if let Some(mut w) = self.current.take() {
            let path = self.written.last().cloned().unwrap_or_default();
            w.flush().map_err(|e| CorpusError::io(path, e))?;
        }
        Ok(())
    }

    /// Flush and return the shard paths written. An empty corpus still gets
    /// one (empty) shard so that it resolves on read.
    pub fn finish(mut self) -> Result<Vec<PathBuf>, CorpusError> {
        if self.written.is_empty() {
            self.rotate()?;
        }
        self.flush_current()?;
        Ok(std::mem::take(&mut self.written))
    }
}

/// Write `docs` as a sharded corpus under `prefix`, removing stale shards
/// of the same prefix first.
pub fn write_corpus<'a, I>(prefix: &Path, docs: I, max_docs: usize) -> Result<Vec<PathBuf>, CorpusError>
where
    I: IntoIterator<Item = &'a Document>,
{
    if let Ok(stale) = resolve_shards(prefix) {
        if !prefix.is_file() && !prefix.is_dir() {
            for path in stale {
                fs::remove_file(&path).map_err(|e| CorpusError::io(&path, e))?;
            }
        }
    }
    let mut writer = ShardWriter::new(prefix, max_docs)?;
    for doc in docs {
        writer.write(doc)?;
    }
    writer.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, class: DataClass, text: &str) -> Document {
        Document::new(id, "src", class, text)
    }

    #[test]
    fn count_tokens_examples() {
        assert_eq!(count_tokens(""), 0);
        assert_eq!(count_tokens("call the weather API"), 4);
        assert_eq!(count_tokens("  tabs\tand\nnewlines \u{00a0} "), 3);
    }

    #[test]
    fn chars_per_token_rounds_up() {
        let t = CharsPerTokenTokenizer { chars_per_token: 4 };
        assert_eq!(t.count(""), 0);
        assert_eq!(t.count("abcd"), 1);
        assert_eq!(t.count("abcde"), 2);
    }

    #[test]
    fn full_record_round_trips() {
        let d = doc("a1", DataClass::AgentTraj, "call get_weather city=Paris")
            .with_meta("url", "https://example.com/x");
        let back = parse_document_record(&d.to_json_line()).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn serialized_field_order_is_fixed() {
        let line = doc("a", DataClass::Text, "x").to_json_line();
        assert_eq!(
            line,
            r#"{"id":"a","source_id":"src","data_class":"text","text":"x","token_count":1,"meta":{}}"#
        );
    }

    #[test]
    fn missing_token_count_is_recomputed() {
        let d = parse_document_record(r#"{"id":"x","source_id":"s","data_class":"code","text":"a b c"}"#)
            .unwrap();
        assert_eq!(d.token_count, 3);
        assert!(d.meta.is_empty());
    }

    #[test]
    fn unknown_class_is_validation_error() {
        let err = parse_document_record(r#"{"id":"x","source_id":"s","data_class":"video","text":""}"#)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Validation(ref m) if m.contains("video")), "{err}");
    }

    #[test]
    fn missing_id_is_validation_error() {
        let err = parse_document_record(r#"{"source_id":"s","data_class":"code","text":""}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Validation(_)));
        let err = parse_document_record(r#"{"id":"","source_id":"s","data_class":"code","text":""}"#)
            .unwrap_err();
        assert!(matches!(err, CorpusError::Validation(_)));
    }

    #[test]
    fn parse_errors_name_the_field() {
        let cases = [
            (r#"{"id":"x","source_id":3,"data_class":"code","text":""}"#, "source_id"),
            (r#"{"id":"x","source_id":"s","data_class":"code"}"#, "text"),
            (r#"{"id":"x","source_id":"s","data_class":"code","text":"","token_count":-1}"#, "token_count"),
            (r#"{"id":"x","source_id":"s","data_class":"code","text":"","meta":{"a":1}}"#, "meta"),
            (r#"{"id":"x","source_id":"s","data_class":"code","text":"","extra":1}"#, "extra"),
            (r#"{"id":"x""#, "<record>"),
        ];
        for (line, field) in cases {
            match parse_document_record(line) {
                Err(CorpusError::Parse { field: f, .. }) => assert_eq!(f, field, "{line}"),
                other => panic!("{line}: {other:?}"),
            }
        }
    }

    #[test]
    fn inconsistent_token_count_rejected() {
        let err =
            parse_document_record(r#"{"id":"x","source_id":"s","data_class":"code","text":"a b","token_count":5}"#)
                .unwrap_err();
        assert!(matches!(err, CorpusError::Validation(_)));
    }

    #[test]
    fn stats_examples() {
        let empty: Vec<Document> = Vec::new();
        let s = compute_stats(&empty).unwrap();
        assert_eq!(s.total_tokens(), 0);
        assert_eq!(s.total_docs(), 0);

        let docs = vec![
            doc("1", DataClass::AgentDoc, "a b c d e"),
            doc("2", DataClass::Code, "a b c d e"),
            doc("3", DataClass::Text, "a b c d e"),
        ];
        let s = compute_stats(&docs).unwrap();
        let per: Vec<u64> = DataClass::ALL.iter().map(|c| s.tokens(*c)).collect();
        assert_eq!(per, vec![5, 0, 5, 5]);
        assert_eq!(s.total_tokens(), 15);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let docs = vec![doc("same", DataClass::Text, "a"), doc("same", DataClass::Code, "b")];
        let err = compute_stats(&docs).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(ref id) if id == "same"));
    }

    #[test]
    fn builder_merge_detects_cross_shard_duplicates() {
        let mut a = StatsBuilder::default();
        a.push(&doc("x", DataClass::Text, "a")).unwrap();
        let mut b = StatsBuilder::default();
        b.push(&doc("y", DataClass::Text, "a b")).unwrap();
        let merged = a.merge(b).unwrap();
        let mut c = StatsBuilder::default();
        c.push(&doc("y", DataClass::Code, "c")).unwrap();
        assert!(matches!(merged.merge(c), Err(CorpusError::DuplicateId(_))));
    }

    #[test]
    fn shard_names_are_zero_padded() {
        assert_eq!(shard_path(Path::new("out/web"), 3), PathBuf::from("out/web.00003.jsonl"));
        assert_eq!(shard_stem("web.00003.jsonl"), Some("web"));
        assert_eq!(shard_stem("web.3.jsonl"), None);
    }

    #[test]
    fn write_and_read_sharded_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("c");
        let docs: Vec<Document> =
            (0..25).map(|i| doc(&format!("d{i:02}"), DataClass::Text, "one two")).collect();
        let paths = write_corpus(&prefix, &docs, 10).unwrap();
        assert_eq!(paths.len(), 3);
        assert_eq!(read_corpus(&prefix).unwrap(), docs);
        assert_eq!(read_corpus(dir.path()).unwrap(), docs);
        // Rewriting with fewer docs leaves no stale shard behind.
        write_corpus(&prefix, &docs[..5], 10).unwrap();
        assert_eq!(resolve_shards(&prefix).unwrap().len(), 1);
    }

    #[test]
    fn read_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.00000.jsonl");
        let good = doc("ok", DataClass::Text, "a").to_json_line();
        fs::write(&path, format!("{good}\n{{\"id\":\"z\"}}\n")).unwrap();
        match read_corpus(&path) {
            Err(CorpusError::AtLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unresolvable_corpus_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(resolve_shards(&dir.path().join("nothing")), Err(CorpusError::NoShards(_))));
    }
}
