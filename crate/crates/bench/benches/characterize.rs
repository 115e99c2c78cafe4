use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kscope_bench::expected_counts;
use kscope_core::status::{sample_counts, SyntheticGenerator};
use kscope_core::{characterize, KScopeConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixed(c: &mut Criterion) {
    let cfg = KScopeConfig::default();
    let mut g = c.benchmark_group("characterize");
    for (name, probs) in [
        ("consistent", vec![0.8, 0.1, 0.1]),
        ("conflicting", vec![0.45, 0.45, 0.1]),
        ("uniform", vec![0.25; 4]),
        ("five_options", vec![0.4, 0.35, 0.1, 0.1, 0.05]),
    ] {
        let counts = expected_counts(&probs, 100, 5);
        g.bench_with_input(BenchmarkId::from_parameter(name), &counts, |b, counts| {
            b.iter(|| characterize(black_box(counts), Some(0), &cfg).unwrap())
        });
    }
    g.finish();
}

fn sampled(c: &mut Criterion) {
    let cfg = KScopeConfig::default();
    let gen = SyntheticGenerator::new(vec![0.6, 0.3, 0.1], 0.05).unwrap();
    c.bench_function("sample_and_characterize_n100", |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter(|| {
            let counts = sample_counts(&gen, 100, 20, 0.1, &mut rng);
            characterize(&counts, Some(0), &cfg).unwrap()
        })
    });
}

criterion_group!(benches, fixed, sampled);
criterion_main!(benches);
