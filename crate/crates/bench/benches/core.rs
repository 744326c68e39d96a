use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kefam_core::domains::{catalog_instantiate, FamilyParams};
use kefam_core::family_geom::{oracle_sample, FormField};
use kefam_core::fefferman::fefferman_sequence;
use kefam_core::wirtinger::{jet, CPoint};
use kefam_core::{solve_slice, NumericH, SolverOptions};
use num_complex::Complex64;

fn ellipse() -> Arc<kefam_core::FamilyDefinition> {
    let params = FamilyParams {
        a: vec![2.5],
        q: vec![-1.5],
        ..FamilyParams::with_n(1)
    };
    Arc::new(catalog_instantiate("ellipsoid_family", &params).unwrap())
}

fn bench_jets(c: &mut Criterion) {
    let mut group = c.benchmark_group("jets");
    for n in 1..=3 {
        let fam = catalog_instantiate("ball_family", &FamilyParams::with_n(n)).unwrap();
        let h = FormField::new("H", fam.oracle_h.as_ref().unwrap()).unwrap();
        let p = CPoint::on_axis(n, 0.4, Complex64::new(0.1, 0.05));
        group.bench_with_input(BenchmarkId::new("oracle_sample", n), &p, |b, p| {
            b.iter(|| oracle_sample(&h, black_box(p)).unwrap())
        });
        let seq = fefferman_sequence(&fam, Complex64::new(0.0, 0.0), n + 1).unwrap();
        let q = CPoint::on_axis(n, 0.4, Complex64::new(0.0, 0.0));
        group.bench_with_input(BenchmarkId::new("fefferman_rho", n), &q, |b, q| {
            b.iter(|| jet(&seq.rho[n], black_box(q), 2).unwrap())
        });
    }
    group.finish();
}

fn bench_slice_solve(c: &mut Criterion) {
    let fam = ellipse();
    let opts = SolverOptions::default();
    let mut group = c.benchmark_group("slice_solve");
    group.sample_size(10);
    for res in [33usize, 65] {
        group.bench_with_input(BenchmarkId::new("ellipse", res), &res, |b, &res| {
            b.iter(|| solve_slice(&fam, Complex64::new(0.2, 0.0), res, 2, &opts).unwrap())
        });
    }
    group.finish();
}

fn bench_numeric_h(c: &mut Criterion) {
    let fam = ellipse();
    let opts = SolverOptions::default();
    let s = Complex64::new(0.2, 0.1);
    let mut group = c.benchmark_group("numeric_h");
    group.sample_size(10);
    group.bench_function("build_res33", |b| {
        b.iter(|| NumericH::build(&fam, s, 33, 2, 2e-2, &opts).unwrap())
    });
    let num = NumericH::build(&fam, s, 33, 2, 2e-2, &opts).unwrap();
    let p = CPoint::on_axis(1, 0.1, s);
    group.bench_function("sample", |b| b.iter(|| num.sample(black_box(&p)).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_jets, bench_slice_solve, bench_numeric_h);
criterion_main!(benches);
