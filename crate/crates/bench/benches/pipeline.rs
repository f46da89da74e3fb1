use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dxprompt_core::dataset::pearson;
use dxprompt_core::{cosine, dps_select, Candidate, Condition, DpsConfig, EmbeddedSample, Embedding, ImageRef, Modality, Record};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn vector(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::new((0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn bench_cosine(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("cosine");
    for dim in [64, 512, 4096] {
        let (a, b) = (vector(&mut rng, dim), vector(&mut rng, dim));
        g.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |bench, _| bench.iter(|| cosine(black_box(&a), black_box(&b))));
    }
    g.finish();
}

fn bench_dps(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = c.benchmark_group("dps_select");
    for pool in [6, 12, 64] {
        let items: Vec<(Candidate, EmbeddedSample)> = (0..pool)
            .map(|i| {
                let r = Record::new(format!("c{i}"), ImageRef::new(format!("{i}.png")), vec![], Condition::Edema, (i % 2) as u8).unwrap();
                (Candidate::new(r), EmbeddedSample::new(vector(&mut rng, 64), vector(&mut rng, 64)))
            })
            .collect();
        let query = EmbeddedSample::new(vector(&mut rng, 64), vector(&mut rng, 64));
        let cfg = DpsConfig { threshold: 0.0, modality: Modality::Multimodal, min_keep: 1 };
        g.bench_with_input(BenchmarkId::from_parameter(pool), &pool, |bench, _| {
            bench.iter(|| dps_select(black_box(&items), black_box(&query), &cfg))
        });
    }
    g.finish();
}

fn bench_pearson(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = c.benchmark_group("pearson");
    for n in [60, 1000, 10_000] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.gen_range(0..2u8))).collect();
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| bench.iter(|| pearson(black_box(&x), black_box(&y))));
    }
    g.finish();
}

criterion_group!(benches, bench_cosine, bench_dps, bench_pearson);
criterion_main!(benches);
