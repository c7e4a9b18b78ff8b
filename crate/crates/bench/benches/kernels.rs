use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mcs_bench::{periodic_square, taylor_green};
use mcs_core::forms::FluxMode;
use mcs_core::linsolve::{CondensedSystem, EliminationSet, PressurePcKind, PressureSchur};
use mcs_core::splitting::{Boundary, SplitterOptions};
use mcs_core::{Splitter, State, TimeParams};
use std::hint::black_box;

fn setup(c: &mut Criterion) {
    let mut g = c.benchmark_group("setup");
    g.sample_size(10);
    for k in [2, 3] {
        let d = periodic_square(8, k);
        g.bench_with_input(BenchmarkId::new("condensed_momentum", k), &d, |b, d| {
            b.iter(|| CondensedSystem::new(d, 0.01, 1e-3, EliminationSet::StressGammaAndBubbles).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("pressure_schur", k), &d, |b, d| {
            b.iter(|| PressureSchur::new(d, PressurePcKind::Jacobi).unwrap())
        });
    }
    g.finish();
}

fn step(c: &mut Criterion) {
    let mut g = c.benchmark_group("time_step");
    g.sample_size(20);
    for (n, k) in [(8, 2), (16, 3)] {
        for (name, flux) in [("upwind", FluxMode::Upwind), ("central", FluxMode::Central), ("hopu1", FluxMode::HopuFixed(1))] {
            let d = periodic_square(n, k);
            let state = State::from_field(&d, &taylor_green).unwrap();
            let params = TimeParams::new(1e-3, 0.01, 1.0).unwrap();
            let boundary = Boundary::new(&d, None);
            let mut s = Splitter::new(d, params, flux, SplitterOptions::default(), boundary, None).unwrap();
            g.bench_function(BenchmarkId::new(format!("{name}_n{n}"), k), |b| b.iter(|| s.advance(black_box(&state)).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, setup, step);
criterion_main!(benches);
