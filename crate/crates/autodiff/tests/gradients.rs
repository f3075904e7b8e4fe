//! Finite-difference checks for every differentiable operator across
//! random shapes and seeds.

use progsup_autodiff::{grad_check, gru_cell, GruWeights, Tape, Tensor, Var};

struct Rng(u64);

impl Rng {
    fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn tensor(&mut self, r: usize, c: usize) -> Tensor {
        let data: Vec<f64> = (0..r * c).map(|_| self.uniform(-1.5, 1.5)).collect();
        Tensor::new(vec![r, c], data)
    }

    fn dim(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }
}

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Each op gets checked across a spread of random shapes; the seed loop
/// plus the per-op list covers well over 100 distinct random cases.
#[test]
fn every_op_matches_central_finite_differences() {
    for seed in 0..20u64 {
        let mut rng = Rng(seed.wrapping_mul(1_000_003).wrapping_add(17));
        let r = rng.dim(1, 4);
        let c = rng.dim(2, 5);
        let k = rng.dim(1, 4);

        let checks: Vec<(&str, f64)> = vec![
            ("add", {
                let (a, b) = (rng.tensor(r, c), rng.tensor(r, c));
                grad_check(
                    |t, v| {
                        let s = t.add(v[0], v[1]);
                        t.sum_all(s)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("sub_mul", {
                let (a, b) = (rng.tensor(r, c), rng.tensor(r, c));
                grad_check(
                    |t, v| {
                        let d = t.sub(v[0], v[1]);
                        let m = t.mul(d, v[1]);
                        t.mean_all(m)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("affine_add_scaled", {
                let (a, b) = (rng.tensor(r, c), rng.tensor(r, c));
                grad_check(
                    |t, v| {
                        let x = t.affine(v[0], -1.7, 0.3);
                        let y = t.add_scaled(x, v[1], 2.5);
                        t.sum_all(y)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("matmul", {
                let (a, b) = (rng.tensor(r, k), rng.tensor(k, c));
                grad_check(
                    |t, v| {
                        let m = t.matmul(v[0], v[1]);
                        t.sum_all(m)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("transpose_slice_concat", {
                let a = rng.tensor(r, c);
                let b = rng.tensor(r, c);
                grad_check(
                    |t, v| {
                        let tr = t.transpose(v[0]);
                        let back = t.transpose(tr);
                        let sl = t.slice_cols(back, 0, 2);
                        let cc = t.concat_cols(&[sl, v[1]]);
                        let rr = t.concat_rows(&[cc, cc]);
                        t.mean_all(rr)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("gather_rows", {
                let a = rng.tensor(3, c);
                grad_check(
                    |t, v| {
                        let g = t.gather_rows(v[0], &[0, 2, 0, 1]);
                        let sq = t.mul(g, g);
                        t.sum_all(sq)
                    },
                    &[a],
                    H,
                )
            }),
            ("row_broadcast", {
                let (a, b) = (rng.tensor(r, c), rng.tensor(1, c));
                grad_check(
                    |t, v| {
                        let s = t.add_row_broadcast(v[0], v[1]);
                        let g = t.gelu(s);
                        t.sum_all(g)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("activations", {
                let a = rng.tensor(r, c);
                grad_check(
                    |t, v| {
                        let s = t.sigmoid(v[0]);
                        let th = t.tanh(s);
                        let rl = t.relu(th);
                        let g = t.gelu(rl);
                        t.mean_all(g)
                    },
                    &[a],
                    H,
                )
            }),
            ("softmax", {
                let a = rng.tensor(r, c);
                let probe = rng.tensor(r, c);
                grad_check(
                    |t, v| {
                        let s = t.softmax_rows(v[0], None);
                        let w = t.mul(s, v[1]);
                        t.sum_all(w)
                    },
                    &[a, probe],
                    H,
                )
            }),
            ("softmax_masked", {
                let a = rng.tensor(r, 4);
                let probe = rng.tensor(r, 4);
                grad_check(
                    |t, v| {
                        let s = t.softmax_rows(v[0], Some(&[true, false, true, true]));
                        let w = t.mul(s, v[1]);
                        t.sum_all(w)
                    },
                    &[a, probe],
                    H,
                )
            }),
            ("layer_norm", {
                let (a, g, b) = (rng.tensor(r, c), rng.tensor(1, c), rng.tensor(1, c));
                grad_check(
                    |t, v| {
                        let y = t.layer_norm(v[0], v[1], v[2]);
                        let sq = t.mul(y, y);
                        t.sum_all(sq)
                    },
                    &[a, g, b],
                    H,
                )
            }),
            ("cross_entropy", {
                let a = rng.tensor(r, c);
                let targets: Vec<usize> = (0..r).map(|i| i % c).collect();
                grad_check(|t, v| t.cross_entropy_mean(v[0], &targets), &[a], H)
            }),
            ("bce_with_logits", {
                let a = rng.tensor(r, c);
                let targets = {
                    let data: Vec<f64> = (0..r * c).map(|_| rng.uniform(0.0, 1.0)).collect();
                    Tensor::new(vec![r, c], data)
                };
                let keep: Vec<bool> = (0..r * c).map(|i| i % 3 != 0).collect();
                grad_check(
                    |t, v| t.bce_with_logits_mean(v[0], &targets, Some(&keep)),
                    &[a],
                    H,
                )
            }),
            ("matmul_batched", {
                let blocks = 2;
                let (a, b) = (rng.tensor(blocks * 2, 3), rng.tensor(blocks * 3, 2));
                grad_check(
                    |t, v| {
                        let m = t.matmul_batched(v[0], v[1], 2);
                        t.sum_all(m)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("matmul_batched_nt", {
                let (a, b) = (rng.tensor(2 * 2, 3), rng.tensor(2 * 4, 3));
                grad_check(
                    |t, v| {
                        let m = t.matmul_batched_nt(v[0], v[1], 2);
                        let sq = t.mul(m, m);
                        t.sum_all(sq)
                    },
                    &[a, b],
                    H,
                )
            }),
            ("reshape", {
                let a = rng.tensor(2, 6);
                grad_check(
                    |t, v| {
                        let r = t.reshape(v[0], 4, 3);
                        let sq = t.mul(r, r);
                        t.mean_all(sq)
                    },
                    &[a],
                    H,
                )
            }),
            ("cross_entropy_weighted", {
                let a = rng.tensor(3, c);
                let targets: Vec<usize> = (0..3).map(|i| i % c).collect();
                let weights = vec![0.5, 0.0, 2.0];
                grad_check(
                    |t, v| t.cross_entropy_weighted(v[0], &targets, &weights),
                    &[a],
                    H,
                )
            }),
            ("bce_weighted", {
                let a = rng.tensor(2, c);
                let targets: Vec<f64> = (0..2 * c).map(|_| rng.uniform(0.0, 1.0)).collect();
                let weights: Vec<f64> =
                    (0..2 * c).map(|i| if i % 3 == 0 { 0.0 } else { 0.7 }).collect();
                grad_check(
                    |t, v| t.bce_with_logits_weighted(v[0], &targets, &weights),
                    &[a],
                    H,
                )
            }),
            ("mse", {
                let a = rng.tensor(r, c);
                let target = rng.tensor(r, c);
                grad_check(|t, v| t.mse_mean(v[0], &target), &[a], H)
            }),
            ("gru_cell", {
                let d_in = rng.dim(2, 3);
                let d_h = rng.dim(2, 3);
                let inputs = vec![
                    rng.tensor(1, d_in),
                    rng.tensor(1, d_h),
                    rng.tensor(d_in, d_h),
                    rng.tensor(d_h, d_h),
                    rng.tensor(1, d_h),
                    rng.tensor(d_in, d_h),
                    rng.tensor(d_h, d_h),
                    rng.tensor(1, d_h),
                    rng.tensor(d_in, d_h),
                    rng.tensor(d_h, d_h),
                    rng.tensor(1, d_h),
                ];
                grad_check(
                    |t: &mut Tape, v: &[Var]| {
                        let w = GruWeights {
                            w_xr: v[2],
                            w_hr: v[3],
                            b_r: v[4],
                            w_xz: v[5],
                            w_hz: v[6],
                            b_z: v[7],
                            w_xh: v[8],
                            w_hh: v[9],
                            b_h: v[10],
                        };
                        let h = gru_cell(t, v[0], v[1], &w);
                        let sq = t.mul(h, h);
                        t.sum_all(sq)
                    },
                    &inputs,
                    H,
                )
            }),
        ];

        for (name, err) in checks {
            assert!(
                err < TOL,
                "op {name} failed finite-difference check at seed {seed}: {err}"
            );
        }
    }
}

#[test]
fn matmul_chain_gradients_match_finite_differences() {
    let mut rng = Rng(99);
    let a = rng.tensor(3, 4);
    let b = rng.tensor(4, 2);
    let c = rng.tensor(2, 3);
    let err = grad_check(
        |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let abc = t.matmul(ab, v[2]);
            let sq = t.mul(abc, abc);
            t.mean_all(sq)
        },
        &[a, b, c],
        H,
    );
    assert!(err < TOL, "matmul chain error {err}");
}
