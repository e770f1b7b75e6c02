use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rttad::data::kmeans;
use rttad::losses::Objective;
use rttad::metrics::{auc_pr, auc_roc};
use rttad::ttcl::knn_query;
use rttad_bench::{model, scored_labels, uniform};

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_backward");
    for d in [6, 32] {
        let (cfg, params) = model(d, 0);
        let x = uniform(512, d, 1);
        let obj = Objective::train(
            0.5,
            cfg.gamma,
            cfg.tau,
            cfg.diversity_mean_inner,
            cfg.diversity_scale,
        );
        g.bench_with_input(BenchmarkId::new("forward", d), &x, |b, x| {
            b.iter(|| params.forward(black_box(x)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("value_and_grad", d), &x, |b, x| {
            b.iter(|| obj.value_and_grad(&params, black_box(x)).unwrap())
        });
    }
    g.finish();
}

fn knn(c: &mut Criterion) {
    let pool = uniform(2000, 128, 2);
    let queries = uniform(256, 128, 3);
    c.bench_function("knn_256x2000_z128_k3", |b| {
        b.iter(|| knn_query(black_box(&queries), &pool, 3).unwrap())
    });
}

fn clustering(c: &mut Criterion) {
    let x = uniform(2000, 10, 4);
    c.bench_function("kmeans_2000x10_k3", |b| {
        b.iter(|| kmeans(black_box(&x), 3, 0).unwrap())
    });
}

fn metrics(c: &mut Criterion) {
    let (s, y) = scored_labels(10_000, 500, 5);
    c.bench_function("auc_roc_10k", |b| {
        b.iter(|| auc_roc(black_box(&s), &y).unwrap())
    });
    c.bench_function("auc_pr_10k", |b| {
        b.iter(|| auc_pr(black_box(&s), &y).unwrap())
    });
}

criterion_group!(benches, forward_backward, knn, clustering, metrics);
criterion_main!(benches);
