use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pathgibbs::cluster::partition_function_cluster;
use pathgibbs::mcmc::{chain_rng, run_chain, ExactSampler, InitStrategy, Observable, SamplerParams};
use pathgibbs::TimeGrid;
use pathgibbs_bench::{coupled_model, double_well_spectrum, surrogate};
use std::hint::black_box;

fn spectral(c: &mut Criterion) {
    let mut g = c.benchmark_group("ground_state");
    for points in [241, 2001] {
        g.bench_with_input(BenchmarkId::from_parameter(points), &points, |b, &p| b.iter(|| double_well_spectrum(black_box(p))));
    }
    g.finish();
}

fn sweeps(c: &mut Criterion) {
    let mut g = c.benchmark_group("mcmc_100_sweeps");
    g.sample_size(10);
    for n in [32, 128] {
        let model = coupled_model(n, 0.05);
        let params = SamplerParams {
            n_sweeps: 100,
            burn_in: 0,
            init: InitStrategy::Constant(vec![0.0]),
            ..SamplerParams::default()
        };
        let obs = [Observable::Node {
            name: "x0".into(),
            node: n / 2,
            axis: 0,
        }];
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| b.iter(|| run_chain(&model, &params, &obs).unwrap()));
    }
    g.finish();
}

fn exact(c: &mut Criterion) {
    let sd = double_well_spectrum(241);
    let grid = TimeGrid::new(4.0, 32).unwrap();
    let sampler = ExactSampler::new(&sd, &grid).unwrap();
    let mut rng = chain_rng(1, 0);
    let mut idx = Vec::new();
    c.bench_function("exact_path_32", |b| b.iter(|| sampler.sample_indices(&mut rng, &mut idx)));
}

fn cluster(c: &mut Criterion) {
    let mut g = c.benchmark_group("cluster_full_order");
    g.sample_size(10);
    for n in [4, 6] {
        let s = surrogate(n, 3, 0.05);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| b.iter(|| partition_function_cluster(&s, 0.05, n, 1).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, spectral, sweeps, exact, cluster);
criterion_main!(benches);
