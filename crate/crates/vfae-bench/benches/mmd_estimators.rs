//! Exact Gram-matrix MMD (quadratic in the sample count) against the
//! random-feature estimate (linear): the reason the penalty stays cheap in
//! minibatch training.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use vfae_bench::cloud;
use vfae_core::mmd::{mmd_exact, mmd_rff_value, GaussianKernel, RffProjection, RffScaleConvention};

fn bench_estimators(c: &mut Criterion) {
    let mut group = c.benchmark_group("mmd");
    let dim = 50;
    for &n in &[50usize, 100, 200, 400] {
        let x = cloud(n, dim, 0.0, 1);
        let y = cloud(n, dim, 0.5, 2);
        let kernel = GaussianKernel::new(0.25);
        group.bench_with_input(BenchmarkId::new("exact", n), &n, |b, _| {
            b.iter(|| black_box(mmd_exact(&x, &y, &kernel)))
        });
        let proj = RffProjection::new(dim, 500, 0.25, RffScaleConvention::Standard, 3);
        group.bench_with_input(BenchmarkId::new("rff_d500", n), &n, |b, _| {
            b.iter(|| black_box(mmd_rff_value(&x, &y, &proj)))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_estimators);
criterion_main!(benches);
