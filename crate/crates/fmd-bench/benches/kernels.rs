use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fmd_bench::{mixture_values, mlr_model, staircase};
use fmd_core::boost::cosine_gradient;
use fmd_core::lowerbound::{moment_match_sigmas, DEFAULT_STARTS};
use fmd_core::minvar::{estimate_min_variance, minvar_degree};
use fmd_core::subspace::mlr_span;
use fmd_core::{MinVarConfig, Stream, Vector};
use std::hint::black_box;

fn fourier_moments(c: &mut Criterion) {
    let mut g = c.benchmark_group("fourier_moment");
    for pieces in [4, 20] {
        let pp = staircase(pieces, 8);
        g.bench_with_input(BenchmarkId::new("pieces", pieces), &pp, |b, pp| {
            b.iter(|| pp.fourier_moment(black_box(30), black_box(50.0)).unwrap())
        });
    }
    g.finish();
}

fn min_variance(c: &mut Criterion) {
    let cfg = MinVarConfig::default();
    let p = minvar_degree(0.5, cfg.degree_constant);
    let mut g = c.benchmark_group("estimate_min_variance");
    g.sample_size(10);
    for n in [10_000, 100_000] {
        let values = mixture_values(n, 1);
        g.bench_with_input(BenchmarkId::new("n", n), &values, |b, v| {
            b.iter(|| estimate_min_variance(v, 5.0, 0.05, p, &cfg).unwrap())
        });
    }
    g.finish();
}

fn span(c: &mut Criterion) {
    let m = mlr_model(3, 16, 2);
    let batch = m.draw(40_000, Stream::root(3));
    let a = Vector::zeros(16);
    let mut g = c.benchmark_group("mlr_span");
    g.sample_size(10);
    g.bench_function("k3_d16_n40000", |b| b.iter(|| mlr_span(&batch, &a, 3, 1e-2, 0.1, Stream::root(4)).unwrap()));
    g.finish();
}

fn boost_gradient(c: &mut Criterion) {
    let m = mlr_model(1, 8, 5);
    let batch = m.draw(20_000, Stream::root(6));
    let v = &m.regressors[0] * 0.9;
    c.bench_function("cosine_gradient_d8_n20000", |b| b.iter(|| cosine_gradient(&batch, &v, black_box(0.1)).unwrap()));
}

fn moment_matching(c: &mut Criterion) {
    let mut g = c.benchmark_group("moment_match_sigmas");
    for k in [2, 4] {
        g.bench_with_input(BenchmarkId::new("k", k), &k, |b, &k| {
            b.iter(|| moment_match_sigmas(k, 0.25, DEFAULT_STARTS, Stream::root(7)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, fourier_moments, min_variance, span, boost_gradient, moment_matching);
criterion_main!(benches);
