//! Sequential versus pooled evaluation of the same dataset jobs.

use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use textpipe_core::workload::generate_synthetic;
use textpipe_core::{LabeledDoc, NaiveBayesModel, StreamContext, TokenPipeline, WorkerGroup};

fn contexts() -> Vec<(&'static str, StreamContext)> {
    let mut out = vec![("sequential", StreamContext::with_group(WorkerGroup::sequential()))];
    for n in [2, 4] {
        let name: &'static str = if n == 2 { "pool-2" } else { "pool-4" };
        out.push((name, StreamContext::new(n).expect("worker pool")));
    }
    out
}

fn word_count(c: &mut Criterion) {
    let corpus = generate_synthetic(20_000, 2_000, 1).unwrap();
    let texts: Vec<String> = corpus.entries.into_iter().map(|e| e.text).collect();
    let mut group = c.benchmark_group("word_count");
    group.throughput(Throughput::Elements(texts.len() as u64));
    group.sample_size(20);
    for (name, ctx) in contexts() {
        let ds = ctx.from_records(texts.clone(), 8).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let counts = ds
                    .map(|t: String| t.split(' ').map(|w| (w.to_string(), 1u64)).collect::<Vec<_>>())
                    .map_partitions(|_, xs| xs.into_iter().flatten().collect())
                    .filter(|(w, _): &(String, u64)| w.len() > 2)
                    .group_by_key()
                    .map(|(w, ones): (String, Vec<u64>)| (w, ones.len() as u64))
                    .count()
                    .unwrap();
                black_box(counts)
            })
        });
    }
    group.finish();
}

fn classify(c: &mut Criterion) {
    let corpus = generate_synthetic(20_000, 2_000, 2).unwrap();
    let tokens = Arc::new(TokenPipeline::english());
    let docs: Vec<LabeledDoc> = corpus.labeled_docs();
    let model = Arc::new(NaiveBayesModel::train(&docs, 1.0, &tokens).unwrap());
    let texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
    let mut group = c.benchmark_group("classify");
    group.throughput(Throughput::Elements(texts.len() as u64));
    group.sample_size(20);
    for (name, ctx) in contexts() {
        let ds = ctx.from_records(texts.clone(), 8).unwrap();
        let (model, tokens) = (Arc::clone(&model), Arc::clone(&tokens));
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                let (model, tokens) = (Arc::clone(&model), Arc::clone(&tokens));
                let positives = ds
                    .map(move |t: String| model.classify(&t, &tokens).sentiment.index())
                    .reduce(|a, b| a + b)
                    .unwrap();
                black_box(positives)
            })
        });
    }
    group.finish();
}

criterion_group!(benches, word_count, classify);
criterion_main!(benches);
