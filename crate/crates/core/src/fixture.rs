//! Deterministic generator for the bundled desk-scale fixture.
//!
//! The fixture is a small self-contained workspace: seed sources with a
//! manifest, a web candidate corpus with ground-truth labels, text and code
//! pools for mixing, per-benchmark scaling observations, a link graph for
//! frontier expansion, and a `pipeline.json` that runs every stage over it.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::corpus::{write_corpus, CorpusError, DataClass, Document};
use crate::ingest::{SourceFormat, SourceKind, SourceSpec};
use crate::quality::{Label, LabeledSample};
use crate::scaling::MixObservation;

pub const ANNOTATION_PROMPT: &str = include_str!("../assets/prompts/llm_annotation.txt");
pub const CODE_TO_TEXT_PROMPT: &str = include_str!("../assets/prompts/code_to_text.txt");

const AGENT_WORDS: &[&str] = &[
    "api", "tool", "call", "function", "parameter", "endpoint", "request", "response", "json", "schema",
    "agent", "plan", "action", "observation", "thought", "invoke", "argument", "return", "query", "search",
    "execute", "step", "task", "goal", "retrieve", "calendar", "booking", "token", "auth", "header",
    "status", "retry", "callback", "webhook", "sdk", "client", "method", "field", "payload", "latency",
];
const GENERAL_WORDS: &[&str] = &[
    "river", "history", "garden", "music", "recipe", "football", "weather", "novel", "painting", "mountain",
    "village", "harvest", "poetry", "festival", "ocean", "castle", "forest", "journey", "family", "market",
    "season", "island", "bridge", "cathedral", "orchestra", "sunset", "meadow", "library", "empire",
    "voyage", "bakery", "lantern", "winter", "pottery", "theatre", "canyon", "folklore", "vineyard",
];
const COMMON_WORDS: &[&str] = &[
    "the", "a", "of", "to", "and", "in", "is", "for", "with", "on", "this", "that", "by", "from", "as",
    "it", "be", "are", "at", "or", "we", "you", "can", "will", "each", "when", "then", "into",
];
const CODE_NAMES: &[&str] = &["items", "count", "total", "index", "buffer", "node", "value", "result", "cache", "path"];

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureOptions {
    pub seed: u64,
    pub seed_docs: usize,
    pub web_docs: usize,
    pub near_duplicates: usize,
    pub label_noise: f64,
    pub pool_docs: usize,
    pub shard_docs: usize,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            seed: 20_240_601,
            seed_docs: 200,
            web_docs: 2000,
            near_duplicates: 100,
            label_noise: 0.03,
            pool_docs: 600,
            shard_docs: 500,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureSummary {
    pub seed_docs: usize,
    pub web_docs: usize,
    pub text_docs: usize,
    pub code_docs: usize,
    pub observations: usize,
    pub files: Vec<String>,
}

fn pick<'a>(rng: &mut ChaCha8Rng, words: &[&'a str]) -> &'a str {
    words[rng.random_range(0..words.len())]
}

fn prose(rng: &mut ChaCha8Rng, topic: &[&str], p_topic: f64, len: usize) -> String {
    let mut out = Vec::with_capacity(len);
    for _ in 0..len {
        out.push(if rng.random_bool(p_topic) { pick(rng, topic) } else { pick(rng, COMMON_WORDS) });
    }
    out.join(" ")
}

fn code_snippet(rng: &mut ChaCha8Rng, i: usize) -> String {
    let mut lines = vec![format!("def step_{i}({}, {}):", pick(rng, CODE_NAMES), pick(rng, CODE_NAMES))];
    for _ in 0..rng.random_range(4..12) {
        let (a, b) = (pick(rng, CODE_NAMES), pick(rng, CODE_NAMES));
        let n = rng.random_range(0..100);
        lines.push(match rng.random_range(0..4) {
            0 => format!("    {a} = {b} + {n}"),
            1 => format!("    if {a} > {n}: {b} = {a} - {n}"),
            2 => format!("    for {a} in range({n}): {b} += {a}"),
            _ => format!("    {a}.append({b} * {n})"),
        });
    }
    lines.push(format!("    return {}", pick(rng, CODE_NAMES)));
    lines.join("\n")
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<(), CorpusError> {
    let mut f = fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    for r in rows {
        writeln!(f, "{}", serde_json::to_string(r).expect("fixture rows serialize")).map_err(|e| CorpusError::io(path, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CorpusError> {
    fs::write(path, text).map_err(|e| CorpusError::io(path, e))
}

fn seed_sources(rng: &mut ChaCha8Rng, dir: &Path, total: usize) -> Result<Vec<SourceSpec>, CorpusError> {
    let docs_n = total * 2 / 5;
    let react_n = (total - docs_n) / 2;
    let plan_n = total - docs_n - react_n;

    let tool_docs: Vec<_> = (0..docs_n)
        .map(|i| {
            let len = rng.random_range(50..110);
            json!({
                "id": format!("d{i:04}"),
                "text": prose(rng, AGENT_WORDS, 0.65, len),
                "url": format!("https://tools{}.example/docs/page{i}", i % 7),
            })
        })
        .collect();
    let react: Vec<_> = (0..react_n)
        .map(|i| {
            let mut parts = Vec::new();
            for _ in 0..rng.random_range(2..5) {
                parts.push(format!("Thought: {}", prose(rng, AGENT_WORDS, 0.6, 10)));
                parts.push(format!("Action: {}({})", pick(rng, AGENT_WORDS), pick(rng, AGENT_WORDS)));
                parts.push(format!("Observation: {}", prose(rng, AGENT_WORDS, 0.5, 8)));
            }
            json!({"id": format!("r{i:04}"), "text": parts.join("\n")})
        })
        .collect();
    let plans: Vec<_> = (0..plan_n)
        .map(|i| {
            let steps: Vec<String> = (1..=rng.random_range(3..7))
                .map(|s| format!("{s}. {}", prose(rng, AGENT_WORDS, 0.6, 9)))
                .collect();
            json!({"id": format!("p{i:04}"), "text": steps.join("\n")})
        })
        .collect();

    let src = dir.join("sources");
    fs::create_dir_all(&src).map_err(|e| CorpusError::io(&src, e))?;
    write_jsonl(&src.join("tool_docs.jsonl"), &tool_docs)?;
    write_jsonl(&src.join("react_traj.jsonl"), &react)?;
    write_jsonl(&src.join("api_plans.jsonl"), &plans)?;
    Ok(vec![
        SourceSpec {
            name: "tool_docs".into(),
            kind: SourceKind::Documentation,
            format: SourceFormat::Json,
            declared_tokens: None,
            origin: "sources/tool_docs.jsonl".into(),
        },
        SourceSpec {
            name: "react_traj".into(),
            kind: SourceKind::Trajectory,
            format: SourceFormat::React,
            declared_tokens: None,
            origin: "sources/react_traj.jsonl".into(),
        },
        SourceSpec {
            name: "api_plans".into(),
            kind: SourceKind::Trajectory,
            format: SourceFormat::NlPlan,
            declared_tokens: None,
            origin: "sources/api_plans.jsonl".into(),
        },
        SourceSpec {
            name: "toolbench_remote".into(),
            kind: SourceKind::Trajectory,
            format: SourceFormat::ApiSeq,
            declared_tokens: Some(1_000_000),
            origin: "https://datasets.example/toolbench".into(),
        },
    ])
}

fn web_corpus(rng: &mut ChaCha8Rng, opts: &FixtureOptions) -> (Vec<Document>, Vec<LabeledSample>) {
    let n = opts.web_docs;
    let agent_n = n / 2;
    let mut docs = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let agent = i < agent_n;
        let len = rng.random_range(40..120);
        let (topic, path) = if agent { (AGENT_WORDS, "docs") } else { (GENERAL_WORDS, "blog") };
        let text = prose(rng, topic, 0.6, len);
        truth.push(if agent { Label::Agent } else { Label::General });
        docs.push((text, format!("https://site{}.example/{path}/page{i}", i % 23)));
    }
    // Near-duplicates: copies of earlier agent pages with two words swapped out.
    for j in 0..opts.near_duplicates.min(agent_n / 2) {
        let src = rng.random_range(0..agent_n / 2);
        let target = agent_n / 2 + j;
        let mut words: Vec<String> = docs[src].0.split(' ').map(String::from).collect();
        for _ in 0..2 {
            let at = rng.random_range(0..words.len());
            words[at] = pick(rng, AGENT_WORDS).to_string();
        }
        docs[target].0 = words.join(" ");
    }

    // Interleave labels across ids so shard boundaries do not align with topic.
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut out_docs = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for (pos, idx) in order.into_iter().enumerate() {
        let id = format!("web-{pos:05}");
        let (text, url) = &docs[idx];
        out_docs.push(Document::new(id.clone(), "web", DataClass::AgentDoc, text.clone()).with_meta("url", url.clone()));
        let mut label = truth[idx];
        if rng.random_bool(opts.label_noise) {
            label = if label == Label::Agent { Label::General } else { Label::Agent };
        }
        labels.push(LabeledSample { doc_id: id, label, annotator: "fixture".into() });
    }
    (out_docs, labels)
}

fn observations(rng: &mut ChaCha8Rng) -> Vec<MixObservation> {
    // Two agent benchmarks falling with x and one general benchmark rising.
    let curves = [("nexus", 0.6, 0.8, -0.5), ("api_bank", 0.5, 0.8, -0.5), ("mmlu", 1.2, 625.0 / 243.0, 2.0)];
    let mut out = Vec::new();
    for (name, c, k, alpha) in curves {
        for i in 1..=12 {
            let x = i as f64 * 0.05;
            let noise = (rng.random::<f64>() - 0.5) * 0.002;
            let loss: f64 = c + k * x.powf(alpha) + noise;
            out.push(MixObservation {
                x,
                loss: (loss * 1e6).round() / 1e6,
                benchmark: name.into(),
                model_params: Some(45_000_000),
                tokens: Some(2_250_000_000),
            });
        }
    }
    out
}

fn link_graph(dir: &Path) -> Result<(), CorpusError> {
    let mut graph: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let seeds: Vec<String> = (0..5).map(|i| format!("https://hub{i}.example/")).collect();
    for (i, s) in seeds.iter().enumerate() {
        let mut out = Vec::new();
        for j in 0..6 {
            let kind = ["docs", "guide", "blog", "reference", "shop", "news"][j];
            out.push(format!("https://hub{i}.example/{kind}/index"));
        }
        out.push("not a url".into());
        graph.insert(s.clone(), out);
        for kind in ["docs", "guide", "blog", "reference", "shop", "news"] {
            let page = format!("https://hub{i}.example/{kind}/index");
            let children =
                (0..4).map(|c| format!("https://hub{}.example/{kind}/p{c}", (i + c) % 5)).collect::<Vec<_>>();
            graph.insert(page, children);
        }
    }
    let rows: Vec<_> = graph.into_iter().map(|(url, out)| json!({"url": url, "out": out})).collect();
    write_jsonl(&dir.join("links.jsonl"), &rows)?;
    let mut text = String::from("# crawl entry points\n");
    for s in seeds {
        text.push_str(&s);
        text.push('\n');
    }
    write_text(&dir.join("frontier_seeds.txt"), &text)
}

fn pipeline_config() -> serde_json::Value {
    json!({
        "workspace": "work",
        "rng_seed": 42,
        "stages": [
            "stats", "ingest", "frontier", "embed", "retrieve", "prune", "annotate",
            "train-filter", "evaluate", "filter", "fit", "optimize", "mix"
        ],
        "stats": {"corpus": "web"},
        "ingest": {"manifest": "sources.json", "out": "seed"},
        "frontier": {
            "seeds": "frontier_seeds.txt",
            "graph": "links.jsonl",
            "levels": 3,
            "keywords": ["doc", "guide", "reference"],
            "out": "frontier.json"
        },
        "embed": {
            "jobs": [
                {"corpus": "@seed", "out": "seed.emb.jsonl"},
                {"corpus": "web", "out": "web.emb.jsonl"}
            ]
        },
        "retrieve": {"seeds": "@seed.emb.jsonl", "candidates": "@web.emb.jsonl", "k": 1200, "out": "hits.jsonl"},
        "prune": {
            "corpus": "web",
            "embeddings": "@web.emb.jsonl",
            "hits": "@hits.jsonl",
            "threshold": 0.9,
            "out": "retrieved",
            "report": "prune.json"
        },
        "annotate": {
            "corpus": "web",
            "sample": 1600,
            "prompt": "prompts/llm_annotation.txt",
            "backend": {"kind": "file", "labels": "labels.jsonl"},
            "out": "annotations.jsonl"
        },
        "train_filter": {
            "labels": "@annotations.jsonl",
            "corpus": "web",
            "holdout_fraction": 0.2,
            "out": "filter.model",
            "holdout_out": "holdout.jsonl"
        },
        "evaluate": {
            "model": "@filter.model",
            "labels": "@holdout.jsonl",
            "corpus": "web",
            "out": "evaluation.json"
        },
        "filter": {"model": "@filter.model", "corpus": "@retrieved", "keep_token_fraction": 0.4, "out": "filtered"},
        "fit": {
            "observations": "observations.jsonl",
            "benchmarks": ["nexus", "api_bank", "mmlu"],
            "out_dir": "fits"
        },
        "optimize": {
            "fits": ["@fits/nexus.json", "@fits/api_bank.json", "@fits/mmlu.json"],
            "weights": [0.5, 0.5, 1.0],
            "domain": [0.05, 0.6],
            "step": 0.001,
            "out": "optimum.json"
        },
        "mix": {
            "ratios": {"agent": 1.0, "text": 1.0, "code": 1.0},
            "agent_ratio_from": "@optimum.json",
            "total_token_budget": 60000,
            "pools": {"agent": "@filtered", "text": "pools/text", "code": "pools/code"},
            "out": "mix"
        }
    })
}

/// Write the fixture into `dir`, which is created if needed.
pub fn write_desk_fixture(dir: &Path, opts: &FixtureOptions) -> Result<FixtureSummary, CorpusError> {
    fs::create_dir_all(dir).map_err(|e| CorpusError::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut summary = FixtureSummary::default();

    let specs = seed_sources(&mut rng, dir, opts.seed_docs)?;
    let manifest = serde_json::to_string_pretty(&specs).expect("specs serialize") + "\n";
    write_text(&dir.join("sources.json"), &manifest)?;
    summary.seed_docs = opts.seed_docs;

    let (web, labels) = web_corpus(&mut rng, opts);
    write_corpus(&dir.join("web").join("web"), &web, opts.shard_docs)?;
    write_jsonl(&dir.join("labels.jsonl"), &labels)?;
    summary.web_docs = web.len();

    let text: Vec<Document> = (0..opts.pool_docs)
        .map(|i| {
            let len = rng.random_range(60..110);
            Document::new(format!("text-{i:05}"), "books", DataClass::Text, prose(&mut rng, GENERAL_WORDS, 0.5, len))
        })
        .collect();
    let code: Vec<Document> = (0..opts.pool_docs)
        .map(|i| Document::new(format!("code-{i:05}"), "repos", DataClass::Code, code_snippet(&mut rng, i)))
        .collect();
    write_corpus(&dir.join("pools").join("text").join("text"), &text, opts.shard_docs)?;
    write_corpus(&dir.join("pools").join("code").join("code"), &code, opts.shard_docs)?;
    summary.text_docs = text.len();
    summary.code_docs = code.len();

    let obs = observations(&mut rng);
    write_jsonl(&dir.join("observations.jsonl"), &obs)?;
    summary.observations = obs.len();

    link_graph(dir)?;
    let prompts = dir.join("prompts");
    fs::create_dir_all(&prompts).map_err(|e| CorpusError::io(&prompts, e))?;
    write_text(&prompts.join("llm_annotation.txt"), ANNOTATION_PROMPT)?;
    write_text(&prompts.join("code_to_text.txt"), CODE_TO_TEXT_PROMPT)?;

    let config = serde_json::to_string_pretty(&pipeline_config()).expect("config serializes") + "\n";
    write_text(&dir.join("pipeline.json"), &config)?;

    summary.files = [
        "sources.json", "sources/", "web/", "labels.jsonl", "pools/text/", "pools/code/", "observations.jsonl",
        "links.jsonl", "frontier_seeds.txt", "prompts/", "pipeline.json",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    Ok(summary)
}
