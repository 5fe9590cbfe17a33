use criterion::{BenchmarkId, Criterion, criterion_group, criterion_main};
use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use forge_core::embed::{EmbedderConfig, EmbeddingVector, embed_corpus};
use forge_core::quality::{FilterHyperparams, Label, evaluate_filter, train_filter};
use forge_core::retrieve::{prune_redundant, retrieve_top_k};
use forge_core::{DataClass, Document};

const WORDS: &[&str] = &[
    "call", "tool", "api", "request", "response", "agent", "plan", "step", "observe", "action",
    "river", "garden", "history", "music", "weather", "recipe", "travel", "market", "novel", "city",
    "the", "a", "of", "and", "to", "with", "for", "on", "in", "is",
];

fn make_docs(n: usize, seed: u64) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(40..120);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            Document::new(format!("d{i:05}"), "bench", DataClass::AgentDoc, text.join(" "))
        })
        .collect()
}

fn random_vectors(n: usize, dims: usize, prefix: &str, seed: u64) -> IndexMap<String, EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let v: Vec<f64> = (0..dims).map(|_| rng.random_range(-1.0..1.0)).collect();
            (format!("{prefix}{i:05}"), EmbeddingVector::new(v))
        })
        .collect()
}

fn labeled(n: usize, seed: u64) -> Vec<(String, Label)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (lab, lo) = if i % 2 == 0 { (Label::Agent, 0) } else { (Label::General, 10) };
            let len = rng.random_range(20..60);
            let text: Vec<&str> = (0..len)
                .map(|_| if rng.random_bool(0.6) { WORDS[lo + rng.random_range(0..10)] } else { WORDS[20 + rng.random_range(0..10)] })
                .collect();
            (text.join(" "), lab)
        })
        .collect()
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(String, rayon::ThreadPool)> {
    let n = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    vec![
        ("sequential".to_string(), rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        (format!("parallel-{n}"), rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()),
    ]
}

#[cfg(feature = "parallel")]
fn run_modes(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| b.iter(|| pool.install(&f)));
    }
    g.finish();
}

#[cfg(not(feature = "parallel"))]
fn run_modes(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::from_parameter("sequential"), |b| b.iter(&f));
    g.finish();
}

fn bench_embed(c: &mut Criterion) {
    let docs = make_docs(2000, 1);
    let cfg = EmbedderConfig::default();
    run_modes(c, "embed_2000_docs", || {
        black_box(embed_corpus(&docs, &cfg).unwrap());
    });
}

fn bench_retrieve(c: &mut Criterion) {
    let seeds = random_vectors(50, 256, "s", 2);
    let cands = random_vectors(1000, 256, "c", 3);
    run_modes(c, "retrieve_50x1000_k25", || {
        black_box(retrieve_top_k(&seeds, &cands, 25).unwrap());
    });
    let seeds = random_vectors(200, 256, "s", 4);
    let cands = random_vectors(10_000, 256, "c", 5);
    run_modes(c, "retrieve_200x10000_k1000", || {
        black_box(retrieve_top_k(&seeds, &cands, 1000).unwrap());
    });
}

fn bench_prune(c: &mut Criterion) {
    let vecs = random_vectors(2000, 256, "p", 6);
    run_modes(c, "prune_2000", || {
        black_box(prune_redundant(&vecs, 0.9).unwrap());
    });
}

fn bench_evaluate(c: &mut Criterion) {
    let data = labeled(20_000, 7);
    let model = train_filter(&data[..2000], &FilterHyperparams::default()).unwrap();
    run_modes(c, "evaluate_20000_docs", || {
        black_box(evaluate_filter(&model, &data).unwrap());
    });
}

criterion_group!(benches, bench_embed, bench_retrieve, bench_prune, bench_evaluate);
criterion_main!(benches);
