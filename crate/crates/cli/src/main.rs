use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use forge_core::corpus::{compute_stats, read_corpus, write_corpus, TokenizerKind, DEFAULT_SHARD_DOCS};
use forge_core::embed::{embed_corpus, load_external_embeddings, select, write_embeddings, EmbedderConfig};
use forge_core::fixture::{write_desk_fixture, FixtureOptions, ANNOTATION_PROMPT};
use forge_core::ingest::{
    ingest_sources, load_link_graph, load_manifest, load_seed_urls, plan_frontier, DEFAULT_DOC_KEYWORDS,
};
use forge_core::mix::{compose_mixture, verify_manifest, MixClass, MixManifest, MixSpec};
use forge_core::par;
use forge_core::pipeline::{self, corpus_prefix, load_config, run_pipeline, seeded_sample, PipelineError};
use forge_core::quality::{
    annotate_batch, evaluate_filter, filter_by_rank, read_labels, train_filter, write_labels, AnnotationBackend,
    FileBackend, FilterHyperparams, HttpBackend, HttpBackendConfig, Label, NgramLinearClassifier, PromptTemplate,
};
use forge_core::retrieve::{prune_redundant, read_hits, retrieve_top_k, write_hits};
use forge_core::scaling::{fit_benchmark, optimal_mix_ratio, read_curve, read_observations};

/// Build agent-oriented pre-training corpora and their training mixes.
#[derive(Parser)]
#[command(name = "forge", version = forge_core::VERSION)]
struct Cli {
    /// Worker threads for data-parallel loops (overrides FORGE_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log level: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read local seed sources listed in a manifest into a corpus.
    Ingest(IngestArgs),
    /// Expand crawl seeds over a link graph and keep documentation URLs.
    Frontier(FrontierArgs),
    /// Token and document totals per data class.
    Stats(StatsArgs),
    /// Hashed character n-gram embeddings for a corpus.
    Embed(EmbedArgs),
    /// Top-K candidates by maximum cosine similarity to any seed.
    Retrieve(RetrieveArgs),
    /// Drop near-duplicates above a cosine threshold.
    Prune(PruneArgs),
    /// Label documents as agent or general data.
    Annotate(AnnotateArgs),
    /// Train the n-gram quality classifier.
    TrainFilter(TrainFilterArgs),
    /// Accuracy, precision, recall and F1 of a filter model.
    Evaluate(EvaluateArgs),
    /// Score every document with a filter model.
    Score(ScoreArgs),
    /// Keep the top-scoring documents up to a token fraction.
    Filter(FilterArgs),
    /// Fit a power law of loss against agent-data ratio.
    Fit(FitArgs),
    /// Find the mixing ratio minimising weighted loss.
    Optimize(OptimizeArgs),
    /// Compose a token-budgeted training mix.
    Mix(MixArgs),
    /// Recount a mix against its manifest.
    Verify(VerifyArgs),
    /// Run a pipeline config.
    Run(RunArgs),
    /// Print the version.
    Version,
    /// Write the bundled desk-scale fixture.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Corpus output directory.
    #[arg(long)]
    out: PathBuf,
    /// Directory local origins resolve against [default: the manifest's].
    #[arg(long)]
    base_dir: Option<PathBuf>,
    /// Approximate tokens as ceil(chars / N) instead of whitespace words.
    #[arg(long)]
    chars_per_token: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_SHARD_DOCS)]
    shard_docs: usize,
}

#[derive(Args)]
struct FrontierArgs {
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long, default_value_t = 3)]
    levels: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_DOC_KEYWORDS.map(String::from))]
    keywords: Vec<String>,
    /// Filter each level by keyword before expanding it.
    #[arg(long)]
    filter_every_level: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    dims: usize,
    /// Character n-gram range, as min:max.
    #[arg(long, default_value = "3:5")]
    ngrams: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    seeds: PathBuf,
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[arg(long)]
    vecs: PathBuf,
    /// Only prune these retrieved candidates.
    #[arg(long)]
    hits: Option<PathBuf>,
    #[arg(long, default_value_t = forge_core::retrieve::DEFAULT_PRUNE_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    report: PathBuf,
    /// Corpus to materialise the retained documents from.
    #[arg(long, requires = "out")]
    corpus: Option<PathBuf>,
    #[arg(long, requires = "corpus")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Labels file served by the offline backend.
    #[arg(long, conflicts_with = "url", required_unless_present = "url")]
    labels: Option<PathBuf>,
    /// Completion endpoint for the HTTP backend.
    #[arg(long)]
    url: Option<String>,
    /// Prompt template containing {document}.
    #[arg(long)]
    prompt: Option<PathBuf>,
    #[arg(long)]
    sample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

#[derive(Args)]
struct TrainFilterArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON file with hyperparameters; flags below override its fields.
    #[arg(long)]
    hyperparams: Option<PathBuf>,
    #[arg(long)]
    dims: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    word_ngrams: Option<usize>,
    #[arg(long)]
    min_count: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON Lines of {"id", "score"}.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value_t = 0.4)]
    keep_fraction: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SHARD_DOCS)]
    shard_docs: usize,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    benchmark: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    fits: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    /// Search interval, as lo:hi.
    #[arg(long, default_value = "0.05:0.6")]
    domain: String,
    #[arg(long, default_value_t = 0.001)]
    step: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MixArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Pool per class, as class=<corpus>.
    #[arg(long = "pool", required = true)]
    pools: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SHARD_DOCS)]
    shard_docs: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Override a config field, as dotted.path=value.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long)]
    out: PathBuf,
}

/// An error that maps to exit status 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn init_logging(level: log::LevelFilter) {
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| {
            let line = json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

/// A closed stdout (for example `forge stats | head`) is not an error.
fn print_json(value: &serde_json::Value) {
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    let mut out = std::io::stdout().lock();
    if let Err(e) = writeln!(out, "{text}").and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::warn!("writing to stdout failed: {e}");
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_corpus_dir(dir: &Path, docs: &[forge_core::Document], shard_docs: usize) -> Result<usize> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    Ok(write_corpus(&corpus_prefix(dir), docs, shard_docs)?.len())
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64)> {
    let (a, b) = s.split_once(':').ok_or_else(|| usage(format!("{what} must look like lo:hi, got `{s}`")))?;
    let a = a.trim().parse().map_err(|_| usage(format!("bad {what} bound `{a}`")))?;
    let b = b.trim().parse().map_err(|_| usage(format!("bad {what} bound `{b}`")))?;
    Ok((a, b))
}

fn labelled_texts(labels: &Path, corpus: &Path) -> Result<Vec<(String, Label)>> {
    let docs: BTreeMap<String, String> = read_corpus(corpus)?.into_iter().map(|d| (d.id, d.text)).collect();
    let mut seen = BTreeMap::new();
    for s in read_labels(labels)? {
        seen.entry(s.doc_id.clone()).or_insert((s.annotator.clone(), s.label));
        if let Some(slot) = seen.get_mut(&s.doc_id) {
            if s.annotator < slot.0 {
                *slot = (s.annotator, s.label);
            }
        }
    }
    seen.into_iter()
        .map(|(id, (_, label))| {
            docs.get(&id).map(|t| (t.clone(), label)).ok_or_else(|| anyhow!("labelled document `{id}` is not in the corpus"))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => {
            let registry = load_manifest(&a.manifest)?;
            let base = a.base_dir.unwrap_or_else(|| a.manifest.parent().map(Path::to_path_buf).unwrap_or_default());
            let tokenizer = match a.chars_per_token {
                Some(n) => TokenizerKind::CharsPerToken { chars_per_token: n },
                None => TokenizerKind::Whitespace,
            }
            .build();
            let outcome = ingest_sources(&registry, &base, tokenizer.as_ref())?;
            let shards = write_corpus_dir(&a.out, &outcome.docs, a.shard_docs)?;
            let stats = compute_stats(&outcome.docs)?;
            print_json(&json!({
                "sources": registry.len(),
                "remote_sources": outcome.remote_sources,
                "shards": shards,
                "corpus": stats.to_json(),
            }));
        }
        Command::Frontier(a) => {
            let seeds = load_seed_urls(&a.seeds)?;
            let graph = load_link_graph(&a.graph)?;
            let report = plan_frontier(&seeds, &graph, a.levels, &a.keywords, a.filter_every_level)?;
            write_json(&a.out, &report)?;
            print_json(&json!({"level_sizes": report.level_sizes, "rejected": report.rejected, "doc_urls": report.doc_urls.len()}));
        }
        Command::Stats(a) => {
            let docs = read_corpus(&a.corpus)?;
            let stats = compute_stats(&docs)?.to_json();
            match a.out {
                Some(p) => write_json(&p, &stats)?,
                None => print_json(&stats),
            }
        }
        Command::Embed(a) => {
            let (ngram_min, ngram_max) = parse_pair(&a.ngrams, "--ngrams")?;
            if ngram_min.fract() != 0.0 || ngram_max.fract() != 0.0 || ngram_min < 1.0 {
                return Err(usage("--ngrams takes positive integers"));
            }
            let cfg = EmbedderConfig { dims: a.dims, ngram_min: ngram_min as usize, ngram_max: ngram_max as usize, hash_seed: a.seed };
            let docs = read_corpus(&a.corpus)?;
            let vectors = embed_corpus(&docs, &cfg)?;
            write_embeddings(&a.out, vectors.iter())?;
            print_json(&json!({"vectors": vectors.len(), "dims": cfg.dims}));
        }
        Command::Retrieve(a) => {
            let seeds = load_external_embeddings(&a.seeds)?;
            let candidates = load_external_embeddings(&a.candidates)?;
            let hits = retrieve_top_k(&seeds, &candidates, a.k)?;
            write_hits(&a.out, &hits)?;
            print_json(&json!({"hits": hits.len(), "seeds": seeds.len(), "candidates": candidates.len()}));
        }
        Command::Prune(a) => {
            let mut vectors = load_external_embeddings(&a.vecs)?;
            if let Some(h) = &a.hits {
                let hits = read_hits(h)?;
                vectors = select(&vectors, hits.iter().map(|h| &h.candidate_id));
            }
            let report = prune_redundant(&vectors, a.threshold)?;
            write_json(&a.report, &report)?;
            if let (Some(corpus), Some(out)) = (&a.corpus, &a.out) {
                let keep: std::collections::HashSet<&String> = report.retained_ids.iter().collect();
                let mut docs: Vec<_> = read_corpus(corpus)?.into_iter().filter(|d| keep.contains(&d.id)).collect();
                docs.sort_by(|x, y| x.id.cmp(&y.id));
                write_corpus_dir(out, &docs, DEFAULT_SHARD_DOCS)?;
            }
            print_json(&json!({"retained": report.retained_ids.len(), "removed": report.removed_pairs.len()}));
        }
        Command::Annotate(a) => {
            let mut docs = read_corpus(&a.corpus)?;
            if let Some(n) = a.sample {
                docs = seeded_sample(docs, n, a.seed);
            }
            let prompt = match &a.prompt {
                Some(p) => PromptTemplate::load(p)?,
                None => PromptTemplate::annotation(ANNOTATION_PROMPT)?,
            };
            let backend: Box<dyn AnnotationBackend> = match (&a.labels, &a.url) {
                (Some(l), _) => Box::new(FileBackend::from_labels_file("file", l)?),
                (None, Some(url)) => Box::new(HttpBackend::new(HttpBackendConfig {
                    url: url.clone(),
                    timeout_ms: a.timeout_ms,
                    retries: a.retries,
                    concurrency: a.concurrency,
                    annotator: "http".into(),
                })),
                (None, None) => return Err(usage("one of --labels or --url is required")),
            };
            let outcome = annotate_batch(&docs, backend.as_ref(), &prompt, a.concurrency);
            for (id, reason) in &outcome.failures {
                log::warn!("annotation of {id} failed: {reason}");
            }
            write_labels(&a.out, &outcome.samples)?;
            print_json(&json!({
                "labelled": outcome.samples.len(),
                "unlabelled": outcome.unlabeled.len(),
                "failures": outcome.failures.len(),
            }));
            if outcome.samples.is_empty() && !docs.is_empty() {
                bail!("no document was labelled");
            }
        }
        Command::TrainFilter(a) => {
            let mut hp = match &a.hyperparams {
                Some(p) => {
                    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
                }
                None => FilterHyperparams::default(),
            };
            if let Some(v) = a.dims {
                hp.dims = v;
            }
            if let Some(v) = a.lr {
                hp.learning_rate = v;
            }
            if let Some(v) = a.word_ngrams {
                hp.word_ngram_max = v;
            }
            if let Some(v) = a.min_count {
                hp.min_count = v;
            }
            if let Some(v) = a.epochs {
                hp.epochs = v;
            }
            if let Some(v) = a.seed {
                hp.rng_seed = v;
            }
            let samples = labelled_texts(&a.labels, &a.corpus)?;
            let model = train_filter(&samples, &hp)?;
            model.save(&a.out)?;
            print_json(&json!({"samples": samples.len(), "vocab": model.vocab().len(), "epoch_losses": model.epoch_losses()}));
        }
        Command::Evaluate(a) => {
            let model = NgramLinearClassifier::load(&a.model)?;
            let samples = labelled_texts(&a.labels, &a.corpus)?;
            let metrics = evaluate_filter(&model, &samples)?;
            match a.out {
                Some(p) => write_json(&p, &metrics)?,
                None => print_json(&serde_json::to_value(&metrics)?),
            }
        }
        Command::Score(a) => {
            let model = NgramLinearClassifier::load(&a.model)?;
            let docs = read_corpus(&a.corpus)?;
            let scores: Vec<f64> = {
                use par::*;
                docs.par_iter().map(|d| model.predict_score(&d.text)).collect()
            };
            let mut out = String::new();
            for (d, s) in docs.iter().zip(&scores) {
                out.push_str(&serde_json::to_string(&json!({"id": d.id, "score": s}))?);
                out.push('\n');
            }
            fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
            print_json(&json!({"scored": docs.len()}));
        }
        Command::Filter(a) => {
            let model = NgramLinearClassifier::load(&a.model)?;
            let docs = read_corpus(&a.corpus)?;
            let total: u64 = docs.iter().map(|d| d.token_count).sum();
            let scores: Vec<f64> = {
                use par::*;
                docs.par_iter().map(|d| model.predict_score(&d.text)).collect()
            };
            let kept = filter_by_rank(docs.into_iter().zip(scores).collect(), a.keep_fraction)?;
            let kept_tokens: u64 = kept.iter().map(|d| d.token_count).sum();
            write_corpus_dir(&a.out, &kept, a.shard_docs)?;
            print_json(&json!({"kept_docs": kept.len(), "kept_tokens": kept_tokens, "total_tokens": total}));
        }
        Command::Fit(a) => {
            let obs = read_observations(&a.obs)?;
            let curve = fit_benchmark(&obs, &a.benchmark)?;
            match a.out {
                Some(p) => write_json(&p, &curve)?,
                None => print_json(&serde_json::to_value(&curve)?),
            }
        }
        Command::Optimize(a) => {
            if a.fits.is_empty() {
                return Err(usage("--fits needs at least one fit report"));
            }
            let domain = parse_pair(&a.domain, "--domain")?;
            if !(domain.0 > 0.0 && domain.0 < domain.1 && domain.1 <= 1.0) {
                return Err(usage(format!("--domain {}:{} must satisfy 0 < lo < hi <= 1", domain.0, domain.1)));
            }
            if a.weights.as_ref().is_some_and(|w| w.len() != a.fits.len()) {
                return Err(usage("--weights needs one value per fit"));
            }
            let curves = a.fits.iter().map(|p| read_curve(p)).collect::<Result<Vec<_>, _>>()?;
            let weights = a.weights.unwrap_or_else(|| vec![1.0; curves.len()]);
            let opt = optimal_mix_ratio(&curves, &weights, domain, a.step)?;
            let value = json!({
                "x": opt.x,
                "aggregate_loss": opt.aggregate_loss,
                "benchmarks": curves.iter().map(|c| c.benchmark.clone()).collect::<Vec<_>>(),
                "weights": weights,
                "domain": [domain.0, domain.1],
                "step": a.step,
            });
            match a.out {
                Some(p) => write_json(&p, &value)?,
                None => print_json(&value),
            }
        }
        Command::Mix(a) => {
            let spec = MixSpec::load(&a.spec)?;
            let mut pools = BTreeMap::new();
            for p in &a.pools {
                let (class, path) = p.split_once('=').ok_or_else(|| usage(format!("--pool must look like class=<dir>, got `{p}`")))?;
                let class: MixClass = class.parse().map_err(|e: forge_core::mix::MixError| usage(e.to_string()))?;
                if pools.insert(class, read_corpus(Path::new(path))?).is_some() {
                    return Err(usage(format!("pool for `{class}` given twice")));
                }
            }
            let mut mixture = compose_mixture(&pools, &spec)?;
            if a.out.exists() {
                fs::remove_dir_all(&a.out).with_context(|| format!("clearing {}", a.out.display()))?;
            }
            mixture.write_shards(&corpus_prefix(&a.out), a.shard_docs)?;
            mixture.manifest.save(&a.out.join("manifest.json"))?;
            print_json(&json!({
                "realized_tokens": mixture.manifest.realized_tokens,
                "shares": mixture.manifest.shares(),
                "docs": mixture.docs.len(),
            }));
        }
        Command::Verify(a) => {
            let manifest = MixManifest::load(&a.manifest)?;
            let docs = read_corpus(&a.corpus)?;
            let report = verify_manifest(&manifest, &docs)?;
            print_json(&serde_json::to_value(&report)?);
        }
        Command::Run(a) => {
            let loaded = load_config(&a.config, &a.overrides)?;
            let report = run_pipeline(&loaded)?;
            print_json(&json!({
                "status": report.status,
                "stages": report.stages.iter().map(|s| s.stage.as_str()).collect::<Vec<_>>(),
                "report": loaded.workspace().join(pipeline::REPORT_FILE),
            }));
        }
        Command::Version => println!("forge {}", forge_core::VERSION),
        Command::Fixture(a) => {
            let summary = write_desk_fixture(&a.out, &FixtureOptions::default())?;
            print_json(&json!({
                "seed_docs": summary.seed_docs,
                "web_docs": summary.web_docs,
                "text_docs": summary.text_docs,
                "code_docs": summary.code_docs,
                "observations": summary.observations,
            }));
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return pipeline::EXIT_CONFIG as u8;
    }
    if let Some(p) = err.downcast_ref::<PipelineError>() {
        return p.exit_code() as u8;
    }
    pipeline::EXIT_STAGE_FAILED as u8
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.log_level);
    let workers = match cli.workers {
        Some(0) => {
            eprintln!("error: --workers must be positive");
            return ExitCode::from(pipeline::EXIT_CONFIG as u8);
        }
        Some(n) => Some(n),
        None => match pipeline::resolve_workers(None) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(pipeline::EXIT_CONFIG as u8);
            }
        },
    };
    if let Some(n) = workers {
        par::configure_workers(n);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
