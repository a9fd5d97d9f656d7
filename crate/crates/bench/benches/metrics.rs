use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pcad_core::pipeline::auroc;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn auroc_bench(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("auroc");
    for n in [1_000, 100_000] {
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.1)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &(scores, labels), |b, (s, l)| {
            b.iter(|| auroc(s, l).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, auroc_bench);
criterion_main!(benches);
