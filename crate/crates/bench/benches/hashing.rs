use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use tabhash::bounds::{bennett_tail, psi};
use tabhash::TabHasher;
use tabhash_bench::{hashing_specs, keys, BENCH_SEED};

const N_KEYS: u64 = 1 << 16;

fn hashing(c: &mut Criterion) {
    let mut group = c.benchmark_group("hash");
    group.throughput(Throughput::Elements(N_KEYS));
    for spec in hashing_specs().unwrap() {
        let scheme = spec.build(BENCH_SEED).unwrap();
        let ks = keys(&spec, N_KEYS);
        group.bench_with_input(BenchmarkId::from_parameter(spec.descriptor()), &ks, |b, ks| {
            b.iter(|| ks.iter().fold(0u64, |acc, &k| acc ^ scheme.hash(black_box(k))))
        });
    }
    group.finish();
}

fn bounds(c: &mut Criterion) {
    let grid: Vec<(f64, f64)> =
        (0..64).flat_map(|i| (0..16).map(move |j| (2.0 + i as f64, 10f64.powi(j - 8)))).collect();
    c.bench_function("psi/1024-points", |b| {
        b.iter(|| grid.iter().map(|&(p, s2)| psi(black_box(p), 1.0, black_box(s2)).unwrap()).sum::<f64>())
    });
    c.bench_function("bennett_tail/1024-points", |b| {
        b.iter(|| grid.iter().map(|&(p, s2)| bennett_tail(black_box(p), 1.0, black_box(s2)).unwrap()).sum::<f64>())
    });
}

criterion_group!(benches, hashing, bounds);
criterion_main!(benches);
