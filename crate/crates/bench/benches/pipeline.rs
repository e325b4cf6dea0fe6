use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use tbscan_bench::{cascade, corpus};
use tbscan_core::detect_eval::{detect_viewfield, evaluate};
use tbscan_core::synthgen::{corpus_stats, generate_slide};
use tbscan_core::{LabelRule, SplitAssignment, SplitFractions, SynthConfig};

fn synth(c: &mut Criterion) {
    let cfg = SynthConfig::default();
    let mut g = c.benchmark_group("synthgen");
    g.sample_size(10);
    g.bench_function("slide", |b| b.iter(|| generate_slide(black_box(&cfg), 0).unwrap()));
    let corpus = corpus();
    g.bench_function("corpus_stats", |b| b.iter(|| corpus_stats(black_box(&corpus), &LabelRule::default())));
    g.finish();
}

fn detection(c: &mut Criterion) {
    let corpus = corpus();
    let model = cascade();
    let vf = &corpus.slides[0].fields[0].field;
    let split = SplitAssignment::for_corpus(&corpus, &SplitFractions::default()).unwrap();
    let mut g = c.benchmark_group("detect_eval");
    g.sample_size(10);
    g.bench_function("field/stride20", |b| b.iter(|| detect_viewfield(black_box(vf), &model, 20).unwrap()));
    g.bench_function("evaluate/test", |b| {
        b.iter(|| evaluate(&corpus, &split, &model, 20, &LabelRule::default(), 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, synth, detection);
criterion_main!(benches);
