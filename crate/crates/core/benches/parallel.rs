use comoving_core::chart::{ChartConfig, ComovingChart};
use comoving_core::diffusion::{simulate, DiffusionConfig, FnDrift, InitialCondition};
use comoving_core::fields::{Box4, FieldBundle, PacketOptions, PhysicalConstants};
use comoving_core::geometry::{flatness_report, ConstantPatch, Lattice3, SurfaceMetric};
use comoving_core::Execution;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64 as C64;
use std::hint::black_box;
use std::sync::Arc;
use std::time::Duration;

const MODES: [Execution; 2] = [Execution::Sequential, Execution::Parallel];

fn name(exec: Execution) -> &'static str {
    match exec {
        Execution::Sequential => "sequential",
        Execution::Parallel => "parallel",
    }
}

fn ou_ensemble(c: &mut Criterion) {
    let drift = FnDrift(|q: &[f64; 3]| Ok(q.map(|v| -0.5 * v)));
    let patch = ConstantPatch::euclidean();
    let config = DiffusionConfig {
        dt: 1e-3,
        horizon: 1.0,
        paths: 256,
        seed: 7,
        nu: 1.0,
        record_every: 100,
        explosion_bound: 1e6,
        initial: InitialCondition::Point([0.0; 3]),
    };
    let mut group = c.benchmark_group("simulate_256x1000");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name(exec)), &exec, |b, &exec| {
            b.iter(|| black_box(simulate(&drift, &patch, &config, exec).unwrap()))
        });
    }
    group.finish();
}

fn curvature_sweep(c: &mut Criterion) {
    let modes: Vec<([f64; 3], C64)> = (-1..=1)
        .flat_map(|i| (-1..=1).map(move |j| ([0.1 * i as f64, 0.1 * j as f64, 0.0], C64::new(1.0 / (1 + i * i + j * j) as f64, 0.0))))
        .collect();
    let bundle =
        Arc::new(FieldBundle::packet(&modes, PhysicalConstants::natural(), Box4::cube(6.0), &PacketOptions::default()).unwrap());
    let chart = Arc::new(ComovingChart::build(bundle, ChartConfig::default()).unwrap());
    let metric = SurfaceMetric::new(chart);
    let lattice = Lattice3 { lo: [-0.5; 3], hi: [0.5; 3], n: [3, 3, 3] };
    let mut group = c.benchmark_group("flatness_3x3x3");
    for exec in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name(exec)), &exec, |b, &exec| {
            b.iter(|| black_box(flatness_report(&metric, &lattice, 1e-2, 1e-3, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(
    name = benches;
    config = Criterion::default().sample_size(10).measurement_time(Duration::from_secs(3));
    targets = ou_ensemble, curvature_sweep
);
criterion_main!(benches);
