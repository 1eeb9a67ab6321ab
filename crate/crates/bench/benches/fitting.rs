use cmore::fitting::fit_nuclear_report;
use cmore::{fit_ridge, grad_j, pca_fit, ApgConfig, PackedModelMatrix, StepRule};
use cmore_bench::quadratic_task_samples;
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn fitting(c: &mut Criterion) {
    let (_, samples) = quadratic_task_samples(1, 700).unwrap();
    let h = PackedModelMatrix::zeros(10, 25);

    c.bench_function("fit_ridge/700x36", |b| b.iter(|| fit_ridge(black_box(&samples), 1e-6).unwrap()));
    c.bench_function("grad_j/700x36", |b| b.iter(|| grad_j(black_box(&h), &samples, 1e-5).unwrap()));

    let mut group = c.benchmark_group("apg");
    group.sample_size(10);
    for (name, step_rule, precondition) in [
        ("fixed", StepRule::Fixed, false),
        ("lipschitz-preconditioned", StepRule::Lipschitz, true),
    ] {
        let cfg = ApgConfig {
            max_iters: 100,
            stop_rel_tol: 0.0,
            step_rule,
            precondition,
            ..ApgConfig::default()
        };
        group.bench_function(format!("100 iterations/{name}"), |b| {
            b.iter(|| fit_nuclear_report(black_box(&samples), &cfg, &h).unwrap())
        });
    }
    group.finish();

    let contexts: Vec<_> = samples.iter().map(|s| s.context.clone()).collect();
    c.bench_function("pca_fit/700x25->20", |b| b.iter(|| pca_fit(black_box(&contexts), 20).unwrap()));
}

criterion_group!(benches, fitting);
criterion_main!(benches);
