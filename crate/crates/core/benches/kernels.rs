//! Sequential vs data-parallel timings for the hot kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use vld_core::corpus::{greedy_select_exec, mmd_exec, Kernel};
use vld_core::tensor::{score_matrix_exec, EmbeddingMatrix};
use vld_core::Exec;

fn random_embeddings(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> EmbeddingMatrix {
    let flat: Vec<f64> = (0..rows * dim).map(|_| rng.random::<f64>() - 0.5).collect();
    EmbeddingMatrix::from_flat(rows, dim, flat).unwrap()
}

fn execs() -> Vec<(&'static str, Exec)> {
    let mut v = vec![("seq", Exec::Seq)];
    #[cfg(feature = "parallel")]
    v.push(("par", Exec::Par));
    v
}

fn bench_score_matrix(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = random_embeddings(&mut rng, 256, 64);
    let v = random_embeddings(&mut rng, 512, 64);
    let mut g = c.benchmark_group("score_matrix_256x512_d64");
    for (name, exec) in execs() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| score_matrix_exec(&u, &v, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_greedy_select(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images = random_embeddings(&mut rng, 512, 64);
    let pool = random_embeddings(&mut rng, 8192, 64);
    let mut g = c.benchmark_group("greedy_select_512x8192_d64");
    g.sample_size(20);
    for (name, exec) in execs() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| greedy_select_exec(&images, &pool, 0.95, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_mmd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = random_embeddings(&mut rng, 1024, 64);
    let v = random_embeddings(&mut rng, 1024, 64);
    for (kname, kernel) in [
        ("linear", Kernel::Linear),
        ("rbf", Kernel::Rbf { gamma: 1.0 }),
    ] {
        let mut g = c.benchmark_group(format!("mmd_1024x1024_d64_{kname}"));
        g.sample_size(30);
        for (name, exec) in execs() {
            g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
                b.iter(|| mmd_exec(&u, &v, kernel, exec).unwrap())
            });
        }
        g.finish();
    }
}

criterion_group!(benches, bench_score_matrix, bench_greedy_select, bench_mmd);
criterion_main!(benches);
