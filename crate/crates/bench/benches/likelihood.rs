use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sthawkes_bench::{dense_params, sparse_params, uniform_catalog};
use sthawkes_core::{KernelVariant, LikelihoodEngine, Precision};

fn full_evaluation(c: &mut Criterion) {
    let mut group = c.benchmark_group("log_likelihood");
    group.sample_size(10);
    for n in [1_000, 4_000] {
        let catalog = uniform_catalog(n, 7);
        let view = catalog.view().unwrap();
        group.throughput(Throughput::Elements((n * n) as u64));
        for precision in [Precision::Double, Precision::Single] {
            let engine = LikelihoodEngine::with_workers(&view, 1, precision).unwrap();
            for (label, params) in [
                ("dense", dense_params(KernelVariant::Varying)),
                ("sparse", sparse_params(KernelVariant::Varying)),
            ] {
                group.bench_with_input(
                    BenchmarkId::new(format!("{precision}/{label}"), n),
                    &params,
                    |b, p| b.iter(|| engine.log_likelihood(p)),
                );
            }
        }
    }
    group.finish();
}

fn worker_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("workers");
    group.sample_size(10);
    let catalog = uniform_catalog(4_000, 11);
    let view = catalog.view().unwrap();
    let params = dense_params(KernelVariant::Constant);
    for g in [1, 2, 4] {
        let engine = LikelihoodEngine::with_workers(&view, g, Precision::Double).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(g), &params, |b, p| {
            b.iter(|| engine.log_likelihood(p))
        });
    }
    group.finish();
}

// The factored sampler's per-parameter costs: weights only, then each cache.
fn factored_updates(c: &mut Criterion) {
    let mut group = c.benchmark_group("factored");
    group.sample_size(10);
    let catalog = uniform_catalog(4_000, 13);
    let view = catalog.view().unwrap();
    let params = dense_params(KernelVariant::Constant);
    let engine = LikelihoodEngine::with_workers(&view, 1, Precision::Double).unwrap();
    let bg = engine.background_sums(params.tau_t);
    let trig = engine.triggering_sums(params.sigma_x, params.sigma_t, params.variant);
    group.bench_function("weights", |b| {
        b.iter(|| engine.factored_log_likelihood(&params, &bg, &trig))
    });
    group.bench_function("background_sums", |b| {
        b.iter(|| engine.background_sums(params.tau_t))
    });
    group.bench_function("triggering_sums", |b| {
        b.iter(|| engine.triggering_sums(params.sigma_x, params.sigma_t, params.variant))
    });
    group.finish();
}

criterion_group!(benches, full_evaluation, worker_scaling, factored_updates);
criterion_main!(benches);
