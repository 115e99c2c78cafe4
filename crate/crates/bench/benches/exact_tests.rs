use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kscope_core::stats::{
    binomial_test_one_sided, exact_multinomial_uniform_test, monte_carlo_multinomial_uniform_test, Direction,
};

fn binomial(c: &mut Criterion) {
    let mut g = c.benchmark_group("binomial_one_sided");
    for n in [20u64, 100, 1000, 10_000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| binomial_test_one_sided(black_box(n * 3 / 5), n, 0.5, Direction::Greater).unwrap())
        });
    }
    g.finish();
}

fn multinomial(c: &mut Criterion) {
    let mut g = c.benchmark_group("multinomial_exact");
    g.sample_size(20);
    for (n, d) in [(20u64, 3usize), (100, 3), (100, 4), (50, 6)] {
        let mut counts = vec![n / d as u64; d];
        counts[0] += n - counts.iter().sum::<u64>();
        g.bench_with_input(BenchmarkId::new(format!("d{d}"), n), &counts, |b, counts| {
            b.iter(|| exact_multinomial_uniform_test(black_box(counts)).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("multinomial_monte_carlo");
    g.sample_size(10);
    g.bench_function("n200_d10_100k", |b| {
        let counts = vec![20u64; 10];
        b.iter(|| monte_carlo_multinomial_uniform_test(black_box(&counts), 100_000, 1).unwrap())
    });
    g.finish();
}

criterion_group!(benches, binomial, multinomial);
criterion_main!(benches);
