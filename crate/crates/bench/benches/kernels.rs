use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use stdglm::linalg::DenseFactor;
use stdglm::sampler::{run_chain, ChainConfig};
use stdglm::spde::{assemble_fem, PrecisionBuilder};
use stdglm::special::bessel_k;
use stdglm::build_dense_correlation;
use stdglm_bench::{dense_context, mesh_for, preset_data, sparse_context};

fn bessel(c: &mut Criterion) {
    c.bench_function("bessel_k nu=1 over 100 points", |b| {
        b.iter(|| (1..=100).map(|k| bessel_k(1.0, black_box(0.05 * k as f64))).sum::<f64>())
    });
    c.bench_function("bessel_k nu=2.5 over 100 points", |b| {
        b.iter(|| (1..=100).map(|k| bessel_k(2.5, black_box(0.05 * k as f64))).sum::<f64>())
    });
}

fn spde(c: &mut Criterion) {
    let data = preset_data(1);
    let mut group = c.benchmark_group("spde");
    for nodes in [121, 441, 1681] {
        let mesh = mesh_for(&data, nodes);
        let n = mesh.n_vertices();
        group.bench_with_input(BenchmarkId::new("assemble_fem", n), &mesh, |b, m| b.iter(|| assemble_fem(m).unwrap()));
        let fem = assemble_fem(&mesh).unwrap();
        let builder = PrecisionBuilder::new(&fem).unwrap();
        group.bench_with_input(BenchmarkId::new("precision_and_cholesky", n), &builder, |b, pb| {
            b.iter(|| pb.build(black_box(0.35)).unwrap())
        });
    }
    group.finish();

    c.bench_function("dense correlation and cholesky, 100 sites", |b| {
        b.iter(|| DenseFactor::new(&build_dense_correlation(data.sites(), black_box(0.35), 1.0).unwrap()).unwrap())
    });
}

fn sweeps(c: &mut Criterion) {
    let data = preset_data(1);
    let config = ChainConfig { iterations: 20, burn_in: 10, thinning: 1, n_chains: 1, ..Default::default() };
    let mut group = c.benchmark_group("20 sweeps");
    group.sample_size(10);
    let dense = dense_context(&data);
    group.bench_function("dense", |b| b.iter(|| run_chain(&dense, &config, 0).unwrap()));
    for nodes in [121, 441] {
        let ctx = sparse_context(&data, nodes);
        let n = ctx.spatial().n_nodes();
        group.bench_with_input(BenchmarkId::new("sparse", n), &ctx, |b, ctx| b.iter(|| run_chain(ctx, &config, 0).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bessel, spde, sweeps);
criterion_main!(benches);
