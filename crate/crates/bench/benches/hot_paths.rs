use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use ctxsched_bench::{demo_trace, frame_pair, scheduler};
use ctxsched_core::context::ncc;
use ctxsched_core::{build_prediction_map, similarity, Catalog, ModelLoader, SchedulerConfig};

fn context(c: &mut Criterion) {
    let (p, q, pb, qb) = frame_pair(7);
    c.bench_function("ncc 640x640", |b| b.iter(|| ncc(black_box(&p), black_box(&q)).unwrap()));
    c.bench_function("similarity 640x640 with boxes", |b| {
        b.iter(|| similarity(black_box(&p), black_box(&q), Some(&pb), Some(&qb)).unwrap())
    });
}

fn scheduling(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let trace = demo_trace();
    c.bench_function("build prediction map (demo trace)", |b| {
        b.iter(|| build_prediction_map(black_box(&trace), SchedulerConfig::default().graph_params()).unwrap())
    });

    let (p, q, pb, qb) = frame_pair(11);
    let mut state = scheduler(&trace, &catalog);
    let pair = state.initial_pair();
    state.schedule(&pair, 0.9, Some(&p), Some(&pb)).unwrap();
    // low confidence forces the full reschedule path on every call
    c.bench_function("schedule 640x640 (reschedule)", |b| {
        b.iter(|| state.schedule(&pair, black_box(0.05), Some(&q), Some(&qb)).unwrap())
    });
}

fn loading(c: &mut Criterion) {
    let catalog = Catalog::builtin();
    let pairs: Vec<_> = catalog.pairs().cloned().collect();
    let mut loader = ModelLoader::new(&catalog);
    let mut i = 0;
    c.bench_function("loader request (round robin)", |b| {
        b.iter(|| {
            i = (i + 1) % pairs.len();
            loader.request(&pairs[i], &catalog).unwrap()
        })
    });
}

criterion_group!(benches, context, scheduling, loading);
criterion_main!(benches);
