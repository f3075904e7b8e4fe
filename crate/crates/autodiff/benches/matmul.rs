//! Parallel vs sequential matmul kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use progsup_autodiff::{matmul_nn_acc, matmul_nn_acc_seq};

fn fill(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed;
    (0..len)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect()
}

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for &n in &[32usize, 128, 256] {
        let a = fill(n * n, 1);
        let b = fill(n * n, 2);
        group.bench_with_input(BenchmarkId::new("seq", n), &n, |bench, _| {
            let mut out = vec![0.0; n * n];
            bench.iter(|| {
                out.iter_mut().for_each(|v| *v = 0.0);
                matmul_nn_acc_seq(&mut out, &a, &b, n, n, n);
            });
        });
        group.bench_with_input(BenchmarkId::new("dispatch", n), &n, |bench, _| {
            let mut out = vec![0.0; n * n];
            bench.iter(|| {
                out.iter_mut().for_each(|v| *v = 0.0);
                matmul_nn_acc(&mut out, &a, &b, n, n, n);
            });
        });
    }
    group.finish();
}

criterion_group!(benches, bench_matmul);
criterion_main!(benches);
