use criterion::{black_box, criterion_group, criterion_main, Criterion};
use latinv_bench::{grid_network, parallelogram_potential};
use lattice_inverse::bvp::{dn_map, Convention};
use lattice_inverse::network::{dn_map_res, reduce};
use lattice_inverse::scattering::{green_at, green_key};
use lattice_inverse::spectral::fermi_sample;
use lattice_inverse::{reconstruct_potential, DoubleDouble, HexParallelogram, LatticeKind, PeriodicLattice, VertexId};
use num_complex::Complex64;

const LAMBDA: f64 = 0.3;

fn boundary_maps(c: &mut Criterion) {
    let par = HexParallelogram::new(4).unwrap();
    let potential = parallelogram_potential(&par, LAMBDA);
    c.bench_function("dn_map N=4 f64", |b| {
        b.iter(|| dn_map::<f64>(par.region(), black_box(&potential), LAMBDA, Convention::Modified).unwrap())
    });
    c.bench_function("dn_map N=4 double-double", |b| {
        b.iter(|| dn_map::<DoubleDouble>(par.region(), black_box(&potential), LAMBDA, Convention::Modified).unwrap())
    });
}

fn reconstruction(c: &mut Criterion) {
    let mut group = c.benchmark_group("reconstruct");
    group.sample_size(10);
    for n in [3, 4] {
        let par = HexParallelogram::new(n).unwrap();
        let potential = parallelogram_potential(&par, LAMBDA);
        let dn = dn_map::<DoubleDouble>(par.region(), &potential, LAMBDA, Convention::Modified).unwrap();
        group.bench_function(format!("N={n}"), |b| b.iter(|| reconstruct_potential(&par, black_box(&dn)).unwrap()));
    }
    group.finish();
}

fn networks(c: &mut Criterion) {
    let net = grid_network(5);
    c.bench_function("dn_map_res 5x5 grid", |b| b.iter(|| dn_map_res(black_box(&net)).unwrap()));
    let mut group = c.benchmark_group("reduce");
    group.sample_size(10);
    group.bench_function("4x4 grid", |b| b.iter(|| reduce(black_box(&grid_network(4)), 3, 20_000)));
    group.finish();
}

fn spectral(c: &mut Criterion) {
    c.bench_function("fermi_sample hexagonal 256", |b| {
        b.iter(|| fermi_sample(PeriodicLattice::Hexagonal, black_box(0.95), 1, 256).unwrap())
    });
    let origin = VertexId::new(1, 0, 0);
    let keys: Vec<_> = (0..6).map(|k| green_key(VertexId::new(2, k - 3, 2 - k), origin)).collect();
    c.bench_function("green_at hexagonal 6 keys", |b| {
        b.iter(|| green_at(LatticeKind::Hexagonal, Complex64::new(0.6, 1e-2), black_box(&keys), 1e-11).unwrap())
    });
}

criterion_group!(benches, boundary_maps, reconstruction, networks, spectral);
criterion_main!(benches);
