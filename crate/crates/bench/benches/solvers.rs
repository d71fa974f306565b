use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use tabmdp::harness::generate_garnet;
use tabmdp::mdp::{mec_decomposition, Policy};
use tabmdp::{gain_bias_of_policy, solve_average_optimal, solve_discounted_optimal};

fn bench_discounted(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_discounted_optimal");
    for &s in &[10usize, 40] {
        let m = generate_garnet(s, 4, 3.min(s), 7).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(s), &m, |b, m| {
            b.iter(|| solve_discounted_optimal(black_box(m), 0.95, 1e-8).unwrap())
        });
    }
    group.finish();
}

fn bench_average(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_average_optimal");
    for &s in &[10usize, 40] {
        let m = generate_garnet(s, 4, 3.min(s), 7).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(s), &m, |b, m| {
            b.iter(|| solve_average_optimal(black_box(m), 1e-8).unwrap())
        });
    }
    group.finish();
}

fn bench_gain_bias(c: &mut Criterion) {
    let m = generate_garnet(40, 4, 3, 7).unwrap();
    let pi = Policy::new(vec![0; 40], 4).unwrap();
    c.bench_function("gain_bias_of_policy/40", |b| {
        b.iter(|| gain_bias_of_policy(black_box(&m), black_box(&pi)).unwrap())
    });
}

fn bench_mec(c: &mut Criterion) {
    let m = generate_garnet(60, 3, 2, 5).unwrap();
    c.bench_function("mec_decomposition/60", |b| {
        b.iter(|| mec_decomposition(black_box(&m)))
    });
}

criterion_group!(benches, bench_discounted, bench_average, bench_gain_bias, bench_mec);
criterion_main!(benches);
