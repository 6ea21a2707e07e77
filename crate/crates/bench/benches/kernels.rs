use std::hint::black_box;

use aggstab::filters::{estimate_lipschitz, frechet_derivative_poly};
use aggstab::model::{aggregate, Nonlinearity, Pooling, ReadoutKind};
use aggstab::stability::{model_estimate, omega_for_sweep, run_sweep, BoundLayer};
use aggstab::{AggGnnModel, CnnLayerSpec, FirstLayerMode, GraphSignal, Matrix, Omega, PerturbationKind, PolyFilter, SweepConfig};
use aggstab_bench::bench_graph;
use criterion::{criterion_group, criterion_main, Criterion};

fn model(a: usize) -> AggGnnModel {
    let spec = CnnLayerSpec {
        taps: a + 1,
        features_in: 1,
        features_out: 4,
        nonlinearity: Nonlinearity::Relu,
        pool: Pooling::Max { stride: 2 },
    };
    AggGnnModel::init(a, FirstLayerMode::Shared, &[spec], ReadoutKind::Sum, None, 1).unwrap()
}

fn kernels(c: &mut Criterion) {
    let g = bench_graph(64, 3);
    let x = GraphSignal((0..64).map(|i| (i as f64 * 0.37).sin()).collect());
    c.bench_function("aggregate n64 a16", |b| b.iter(|| aggregate(g.shift(), black_box(&x), 16).unwrap()));

    let m = model(16);
    c.bench_function("forward n64 a16", |b| b.iter(|| m.forward(g.shift(), black_box(&x)).unwrap()));

    let f = PolyFilter::new((0..9).map(|k| 1.0 / (k + 1) as f64).collect()).unwrap();
    let omega = Omega::new(-1.0, 1.0, 2048).unwrap();
    c.bench_function("lipschitz a8 grid2048", |b| b.iter(|| estimate_lipschitz(black_box(&f), &omega, true)));

    let small = bench_graph(16, 4);
    let xi = Matrix::from_fn(16, 16, |i, j| ((i * 16 + j) as f64).cos() + ((j * 16 + i) as f64).cos());
    c.bench_function("frechet n16 deg8", |b| b.iter(|| frechet_derivative_poly(&f, small.shift(), black_box(&xi)).unwrap()));

    let sm = model(8);
    let om = omega_for_sweep(&small, 1e-2, 512).unwrap();
    let est = model_estimate(&sm, &om).unwrap();
    let cfg = SweepConfig {
        epsilons: vec![1e-3, 1e-2],
        trials: 20,
        kind: PerturbationKind::Mixed,
        probe_signals: 8,
        seed: 5,
        bound_layer: BoundLayer::FullNetwork,
    };
    c.bench_function("sweep n16 a8 40 trials", |b| b.iter(|| run_sweep(&sm, &small, black_box(&cfg), &est, &om).unwrap()));
}

criterion_group!(benches, kernels);
criterion_main!(benches);
