use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use lfgate_core::bessel::{bessel_j, j0_zero};
use lfgate_core::design::solve_idd_j;
use lfgate_core::experiments::{analytic_gate, run_gate, Frame, SequenceSpec};

const TWO_PI: f64 = 2.0 * PI;

fn bessel(c: &mut Criterion) {
    c.bench_function("bessel_j8", |b| b.iter(|| bessel_j(8, black_box(8.6537))));
    c.bench_function("j0_zero_3", |b| b.iter(|| j0_zero(black_box(3))));
}

fn design(c: &mut Criterion) {
    c.bench_function("solve_idd_2", |b| b.iter(|| solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, black_box(2), 2, 3)));
}

fn gates(c: &mut Criterion) {
    let params = solve_idd_j(TWO_PI * 1e3, TWO_PI * 6.5e6, 2, 2, 3).unwrap();
    let mut spec = SequenceSpec::new(params);
    spec.settings.sample_count = 2;
    c.bench_function("analytic_gate", |b| b.iter(|| analytic_gate(black_box(&spec))));
    c.bench_function("resonant_gate_fock16", |b| b.iter(|| run_gate(black_box(&spec))));

    let mut group = c.benchmark_group("full_frame");
    group.sample_size(10);
    let mut rwa = spec.clone();
    rwa.frame = Frame::Rwa;
    rwa.fock_dim = 6;
    group.bench_function("rwa_gate_fock6", |b| b.iter(|| run_gate(black_box(&rwa))));
    group.finish();
}

criterion_group!(benches, bessel, design, gates);
criterion_main!(benches);
