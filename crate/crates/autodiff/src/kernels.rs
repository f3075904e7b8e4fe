//! Matrix-multiply kernels. All kernels accumulate into `out` so they can
//! serve both the forward pass (zeroed destination) and gradient
//! accumulation. Row-partitioned parallelism keeps results bit-identical
//! to the sequential path regardless of worker count.

use progsup_parallel as par;

/// Work threshold (multiply-accumulates) below which parallel dispatch
/// is not worth the scheduling overhead. Training parallelizes across
/// sample chunks already, so only genuinely large products (wide MLP
/// layers) go through the pool.
const PAR_MIN_MACS: usize = 1 << 21;

#[inline]
fn axpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

/// out[m×n] += a[m×k] · b[k×n]
pub fn matmul_nn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let body = |i: usize, out_row: &mut [f64]| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            axpy(out_row, &b[p * n..(p + 1) * n], a_ip);
        }
    };
    if m * k * n >= PAR_MIN_MACS && m > 1 {
        par::par_for_chunks(out, n, body);
    } else {
        par::seq_for_chunks(out, n, body);
    }
}

/// out[m×k] += a[m×n] · bᵀ where b is [k×n]
pub fn matmul_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, n: usize, k: usize) {
    debug_assert_eq!(out.len(), m * k);
    debug_assert_eq!(a.len(), m * n);
    debug_assert_eq!(b.len(), k * n);
    // Eight independent accumulator lanes keep the dot products out of a
    // serial FMA dependency chain so they vectorize.
    let body = |i: usize, out_row: &mut [f64]| {
        let a_row = &a[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * n..(j + 1) * n];
            let mut lanes = [0.0f64; 8];
            let mut ac = a_row.chunks_exact(8);
            let mut bc = b_row.chunks_exact(8);
            for (xa, xb) in (&mut ac).zip(&mut bc) {
                for l in 0..8 {
                    lanes[l] += xa[l] * xb[l];
                }
            }
            let mut acc: f64 = lanes.iter().sum();
            for (x, y) in ac.remainder().iter().zip(bc.remainder()) {
                acc += x * y;
            }
            *o += acc;
        }
    };
    if m * n * k >= PAR_MIN_MACS && m > 1 {
        par::par_for_chunks(out, k, body);
    } else {
        par::seq_for_chunks(out, k, body);
    }
}

/// out[k×n] += aᵀ · b where a is [m×k], b is [m×n]
pub fn matmul_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    if m * k * n >= PAR_MIN_MACS && k > 1 {
        let body = |i: usize, out_row: &mut [f64]| {
            for p in 0..m {
                let a_pi = a[p * k + i];
                if a_pi != 0.0 {
                    axpy(out_row, &b[p * n..(p + 1) * n], a_pi);
                }
            }
        };
        par::par_for_chunks(out, n, body);
    } else {
        // p-outer keeps the k×n output resident while streaming b once
        for p in 0..m {
            let b_row = &b[p * n..(p + 1) * n];
            let a_row = &a[p * k..(p + 1) * k];
            for (i, &a_pi) in a_row.iter().enumerate() {
                if a_pi != 0.0 {
                    axpy(&mut out[i * n..(i + 1) * n], b_row, a_pi);
                }
            }
        }
    }
}

/// Sequential reference version of `matmul_nn_acc`, kept for benches and
/// equivalence tests.
pub fn matmul_nn_acc_seq(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    par::seq_for_chunks(out, n, |i, out_row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            axpy(out_row, &b[p * n..(p + 1) * n], a_ip);
        }
    });
    let _ = m;
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn fill(len: usize, seed: u64) -> Vec<f64> {
        let mut state = seed;
        (0..len)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn nn_matches_naive_triple_loop() {
        let (m, k, n) = (17, 23, 31);
        let a = fill(m * k, 1);
        let b = fill(k * n, 2);
        let mut out = vec![0.0; m * n];
        matmul_nn_acc(&mut out, &a, &b, m, k, n);
        let expect = naive(&a, &b, m, k, n);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn nt_and_tn_match_explicit_transposes() {
        let (m, k, n) = (7, 5, 9);
        let a = fill(m * k, 3);
        let b = fill(k * n, 4);
        // nt: c[m×k] = (a·b)[m×n] · bᵀ
        let c = naive(&a, &b, m, k, n);
        let mut nt = vec![0.0; m * k];
        matmul_nt_acc(&mut nt, &c, &b, m, n, k);
        let mut bt = vec![0.0; n * k];
        for i in 0..k {
            for j in 0..n {
                bt[j * k + i] = b[i * n + j];
            }
        }
        let expect = naive(&c, &bt, m, n, k);
        for (x, y) in nt.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
        // tn: d[k×n] = aᵀ · c
        let mut tn = vec![0.0; k * n];
        matmul_tn_acc(&mut tn, &a, &c, m, k, n);
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let expect = naive(&at, &c, k, m, n);
        for (x, y) in tn.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn parallel_dispatch_is_bit_identical_to_sequential() {
        let (m, k, n) = (64, 48, 64); // above the parallel threshold
        let a = fill(m * k, 5);
        let b = fill(k * n, 6);
        let mut c1 = vec![0.0; m * n];
        let mut c2 = vec![0.0; m * n];
        matmul_nn_acc(&mut c1, &a, &b, m, k, n);
        matmul_nn_acc_seq(&mut c2, &a, &b, m, k, n);
        assert_eq!(c1, c2);
    }
}
