use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;
use tabmdp::generative::GenerativeModel;
use tabmdp::harness::generate_garnet;

fn bench_empirical_model(c: &mut Criterion) {
    let truth = generate_garnet(20, 4, 5, 3).unwrap();
    let g = GenerativeModel::new(truth, 99);
    let mut group = c.benchmark_group("build_empirical_model");
    for &n in &[256u64, 4096] {
        group.throughput(Throughput::Elements(n * 20 * 4));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| g.build_empirical_model(black_box(n), 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_empirical_model);
criterion_main!(benches);
