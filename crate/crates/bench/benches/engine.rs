use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};

use censor_bench::{censor, single_agent, three_agents};
use censor_core::censor_single::decay_segment;
use censor_core::market::Market;
use censor_core::mathkit::{hemi_mean, solve_cutoff};
use censor_core::{derive, simulate_path, VarianceConvention};

fn kernels(c: &mut Criterion) {
    c.bench_function("solve_cutoff", |b| {
        b.iter(|| solve_cutoff(black_box(2.0), black_box(0.3)))
    });
    c.bench_function("hemi_mean", |b| {
        b.iter(|| hemi_mean(black_box(0.9), black_box(1.0), black_box(0.3)))
    });
}

fn schedules(c: &mut Criterion) {
    let spec = single_agent();
    let d = derive(&spec).unwrap();
    let grid = censor_core::TimeGrid::uniform(1000).unwrap();
    c.bench_function("decay_segment_k1000", |b| {
        b.iter(|| {
            decay_segment(
                &d,
                0,
                0.0,
                1.0,
                1.0,
                &spec.lambda[0],
                &grid,
                VarianceConvention::Proof,
            )
            .unwrap()
        })
    });
    let spec3 = three_agents();
    c.bench_function("multi_censor_build_m3_k1000", |b| {
        b.iter(|| censor(black_box(&spec3), 1000))
    });
}

fn market(c: &mut Criterion) {
    let spec = three_agents();
    let m = Market::new(censor(&spec, 1000));
    let grid = Arc::clone(&m.censor.grid);
    let mut j = 0u64;
    c.bench_function("simulate_path_m3_k1000", |b| {
        b.iter(|| {
            j += 1;
            simulate_path(&spec, &grid, 7, j)
        })
    });
    let path = simulate_path(&spec, &grid, 7, 0);
    c.bench_function("run_path_m3_k1000", |b| {
        b.iter(|| m.run_path(black_box(&path)).unwrap())
    });
}

criterion_group!(benches, kernels, schedules, market);
criterion_main!(benches);
