//! Reverse-mode tape.
//!
//! A `Tape` records every operation of a forward pass in topological order
//! (inputs always precede their consumers, by construction). `backward`
//! walks the record once in reverse, accumulating gradients for every node
//! that transitively requires them. Repeated `backward` calls accumulate
//! into the same gradient buffers; callers that want fresh gradients build
//! a fresh tape.
//!
//! Leaves may share storage with the caller through `Arc`, which lets many
//! tapes in worker threads read one set of parameters without copying.

use std::sync::Arc;

use crate::kernels::{matmul_nn_acc, matmul_nt_acc, matmul_tn_acc};
use crate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Storage {
    Owned(Tensor),
    Shared(Arc<Tensor>),
}

impl Storage {
    fn get(&self) -> &Tensor {
        match self {
            Storage::Owned(t) => t,
            Storage::Shared(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// mul·x + add, elementwise with scalar coefficients
    Affine { x: Var, mul: f64 },
    /// a + scale·b
    AddScaled { a: Var, b: Var, scale: f64 },
    MatMul(Var, Var),
    /// Block-pairwise product: blocks of `a` times blocks of `b`.
    MatMulBatched { a: Var, b: Var, blocks: usize },
    /// Block-pairwise product with the second operand transposed.
    MatMulBatchedNt { a: Var, b: Var, blocks: usize },
    Transpose(Var),
    Reshape(Var),
    SliceCols { x: Var, start: usize, len: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows { table: Var, idx: Vec<usize> },
    AddRowBroadcast { x: Var, row: Var },
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Gelu(Var),
    SoftmaxRows { x: Var },
    LayerNorm { x: Var, gain: Var, bias: Var, stats: Vec<(f64, f64)> },
    SumAll(Var),
    MeanAll(Var),
    CrossEntropyMean { logits: Var, targets: Vec<usize> },
    CrossEntropyWeighted { logits: Var, targets: Vec<usize>, weights: Vec<f64> },
    BceWithLogitsMean { scores: Var, targets: Vec<f64>, keep: Option<Vec<bool>>, count: usize },
    BceWithLogitsWeighted { scores: Var, targets: Vec<f64>, weights: Vec<f64> },
    MseMean { pred: Var, target: Vec<f64> },
}

struct Node {
    value: Storage,
    op: Op,
    requires_grad: bool,
}

/// Recorded forward pass plus gradient buffers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact GeLU: x·Φ(x) with Φ the standard normal CDF via erf.
pub(crate) fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_cdf = 0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2));
    let phi_pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    phi_cdf + x * phi_pdf
}

/// Numerically stable softplus, ln(1+eˣ).
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        debug_assert!(
            value.data().iter().all(|x| x.is_finite()),
            "non-finite value produced on the tape"
        );
        self.nodes.push(Node { value: Storage::Owned(value), op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers an owned leaf; gradient participation follows the tensor's
    /// `requires_grad` flag.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad;
        self.nodes.push(Node { value: Storage::Owned(t), op: Op::Leaf, requires_grad: rg });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers a shared leaf without copying its storage.
    pub fn leaf_shared(&mut self, t: Arc<Tensor>) -> Var {
        let rg = t.requires_grad;
        self.nodes.push(Node { value: Storage::Shared(t), op: Op::Leaf, requires_grad: rg });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    /// Registers a leaf that never receives gradients.
    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient buffer of `v`, if one was produced by `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads[v.0].take()
    }

    fn any_requires(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    // ---- elementwise and structural ops ----

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "add shape mismatch {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "sub shape mismatch {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "mul shape mismatch {:?} vs {:?}", ta.shape(), tb.shape());
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(t, Op::Mul(a, b), rg)
    }

    /// mul·x + add (scalar coefficients, applied elementwise).
    pub fn affine(&mut self, x: Var, mul: f64, add: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| mul * v + add).collect();
        let t = Tensor::new(tx.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(t, Op::Affine { x, mul }, rg)
    }

    /// a + scale·b, elementwise over equal shapes.
    pub fn add_scaled(&mut self, a: Var, b: Var, scale: f64) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(
            ta.shape(),
            tb.shape(),
            "add_scaled shape mismatch {:?} vs {:?}",
            ta.shape(),
            tb.shape()
        );
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + scale * y).collect();
        let t = Tensor::new(ta.shape().to_vec(), data);
        let rg = self.any_requires(&[a, b]);
        self.push(t, Op::AddScaled { a, b, scale }, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = (ta.rows(), ta.cols());
        let (k2, n) = (tb.rows(), tb.cols());
        assert_eq!(
            k, k2,
            "matmul dimension mismatch: [{m}x{k}] x [{k2}x{n}] (inner dimensions must agree)"
        );
        let mut out = vec![0.0; m * n];
        matmul_nn_acc(&mut out, ta.data(), tb.data(), m, k, n);
        let rg = self.any_requires(&[a, b]);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul(a, b), rg)
    }

    /// Reinterprets the data under a new shape of equal element count.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let tx = self.value(x);
        assert_eq!(tx.numel(), rows * cols, "reshape {:?} to [{rows}, {cols}]", tx.shape());
        let t = Tensor::new(vec![rows, cols], tx.data().to_vec());
        let rg = self.requires_grad(x);
        self.push(t, Op::Reshape(x), rg)
    }

    /// Block-pairwise matmul: both operands are vertical stacks of
    /// `blocks` equally sized matrices; block i of the output is
    /// `A_i · B_i`.
    pub fn matmul_batched(&mut self, a: Var, b: Var, blocks: usize) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows() % blocks, 0, "lhs rows not divisible into {blocks} blocks");
        assert_eq!(tb.rows() % blocks, 0, "rhs rows not divisible into {blocks} blocks");
        let m = ta.rows() / blocks;
        let k = ta.cols();
        let k2 = tb.rows() / blocks;
        let n = tb.cols();
        assert_eq!(
            k, k2,
            "batched matmul dimension mismatch: [{m}x{k}] x [{k2}x{n}] per block"
        );
        let mut out = vec![0.0; blocks * m * n];
        for i in 0..blocks {
            matmul_nn_acc(
                &mut out[i * m * n..(i + 1) * m * n],
                &ta.data()[i * m * k..(i + 1) * m * k],
                &tb.data()[i * k * n..(i + 1) * k * n],
                m,
                k,
                n,
            );
        }
        let rg = self.any_requires(&[a, b]);
        self.push(Tensor::new(vec![blocks * m, n], out), Op::MatMulBatched { a, b, blocks }, rg)
    }

    /// Block-pairwise `A_i · B_iᵀ` over vertical stacks of `blocks`
    /// matrices with a common column count.
    pub fn matmul_batched_nt(&mut self, a: Var, b: Var, blocks: usize) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.rows() % blocks, 0, "lhs rows not divisible into {blocks} blocks");
        assert_eq!(tb.rows() % blocks, 0, "rhs rows not divisible into {blocks} blocks");
        let m = ta.rows() / blocks;
        let n = ta.cols();
        let p = tb.rows() / blocks;
        assert_eq!(tb.cols(), n, "batched nt inner dimension mismatch");
        let mut out = vec![0.0; blocks * m * p];
        for i in 0..blocks {
            matmul_nt_acc(
                &mut out[i * m * p..(i + 1) * m * p],
                &ta.data()[i * m * n..(i + 1) * m * n],
                &tb.data()[i * p * n..(i + 1) * p * n],
                m,
                n,
                p,
            );
        }
        let rg = self.any_requires(&[a, b]);
        self.push(Tensor::new(vec![blocks * m, p], out), Op::MatMulBatchedNt { a, b, blocks }, rg)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = tx.data()[i * c + j];
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![c, r], out), Op::Transpose(x), rg)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        assert!(start + len <= c, "slice_cols {start}..{} out of {c} columns", start + len);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&tx.data()[i * c + start..i * c + start + len]);
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![r, len], out), Op::SliceCols { x, start, len }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let r = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for p in parts {
                let tp = self.value(*p);
                assert_eq!(tp.rows(), r, "concat_cols row mismatch");
                let c = tp.cols();
                out.extend_from_slice(&tp.data()[i * c..(i + 1) * c]);
            }
        }
        let rg = self.any_requires(parts);
        self.push(Tensor::new(vec![r, total], out), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let c = self.value(parts[0]).cols();
        let total: usize = parts.iter().map(|p| self.value(*p).rows()).sum();
        let mut out = Vec::with_capacity(total * c);
        for p in parts {
            let tp = self.value(*p);
            assert_eq!(tp.cols(), c, "concat_rows column mismatch");
            out.extend_from_slice(tp.data());
        }
        let rg = self.any_requires(parts);
        self.push(Tensor::new(vec![total, c], out), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Row lookup: out[i] = table[idx[i]]. Duplicate indices accumulate
    /// gradient into the same row.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        let tt = self.value(table);
        let (r, c) = (tt.rows(), tt.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            assert!(i < r, "gather_rows index {i} out of {r} rows");
            out.extend_from_slice(&tt.data()[i * c..(i + 1) * c]);
        }
        let rg = self.requires_grad(table);
        self.push(
            Tensor::new(vec![idx.len(), c], out),
            Op::GatherRows { table, idx: idx.to_vec() },
            rg,
        )
    }

    /// Adds a `[1, c]` row vector to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, row: Var) -> Var {
        let (tx, tr) = (self.value(x), self.value(row));
        let c = tx.cols();
        assert_eq!(tr.rows(), 1, "broadcast row must be [1, c]");
        assert_eq!(tr.cols(), c, "broadcast width mismatch {} vs {}", tr.cols(), c);
        let mut out = tx.data().to_vec();
        for chunk in out.chunks_mut(c) {
            for (o, b) in chunk.iter_mut().zip(tr.data()) {
                *o += *b;
            }
        }
        let rg = self.any_requires(&[x, row]);
        self.push(Tensor::new(tx.shape().to_vec(), out), Op::AddRowBroadcast { x, row }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(t, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(tx.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(t, Op::Tanh(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let t = Tensor::new(tx.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(t, Op::Relu(x), rg)
    }

    /// Exact erf-based GeLU, x·Φ(x).
    pub fn gelu(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| gelu_scalar(v)).collect();
        let t = Tensor::new(tx.shape().to_vec(), data);
        let rg = self.requires_grad(x);
        self.push(t, Op::Gelu(x), rg)
    }

    /// Row-wise softmax with max-subtraction. `keep`, when given, marks
    /// which columns participate; the rest get exactly zero probability.
    pub fn softmax_rows(&mut self, x: Var, keep: Option<&[bool]>) -> Var {
        let tx = self.value(x);
        let (r, c) = (tx.rows(), tx.cols());
        if let Some(k) = keep {
            assert_eq!(k.len(), c, "softmax mask width mismatch");
            assert!(k.iter().any(|&b| b), "softmax row with every column masked");
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if keep.map_or(true, |k| k[j]) && v > max {
                    max = v;
                }
            }
            let mut sum = 0.0;
            for (j, &v) in row.iter().enumerate() {
                if keep.map_or(true, |k| k[j]) {
                    let e = (v - max).exp();
                    out[i * c + j] = e;
                    sum += e;
                }
            }
            for j in 0..c {
                out[i * c + j] /= sum;
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::new(vec![r, c], out), Op::SoftmaxRows { x }, rg)
    }

    /// Per-row layer normalization (population variance, eps 1e-5) followed
    /// by the learned elementwise affine `gain ∘ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        const EPS: f64 = 1e-5;
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let (r, c) = (tx.rows(), tx.cols());
        assert!(c >= 2, "layer_norm needs at least 2 features, got {c}");
        assert_eq!(tg.cols(), c, "layer_norm gain width mismatch");
        assert_eq!(tb.cols(), c, "layer_norm bias width mismatch");
        let mut out = vec![0.0; r * c];
        let mut stats = Vec::with_capacity(r);
        for i in 0..r {
            let row = &tx.data()[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + EPS).sqrt();
            stats.push((mean, rstd));
            for j in 0..c {
                let xhat = (row[j] - mean) * rstd;
                out[i * c + j] = tg.data()[j] * xhat + tb.data()[j];
            }
        }
        let rg = self.any_requires(&[x, gain, bias]);
        self.push(Tensor::new(vec![r, c], out), Op::LayerNorm { x, gain, bias, stats }, rg)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::SumAll(x), rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let s = tx.data().iter().sum::<f64>() / tx.numel() as f64;
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s), Op::MeanAll(x), rg)
    }

    /// Mean over rows of −log softmax(row)[target]. Targets index columns.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Var {
        let tl = self.value(logits);
        let (r, c) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), r, "one target per logits row");
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            assert!(t < c, "class target {t} out of range 0..{c}");
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[t];
        }
        let rg = self.requires_grad(logits);
        self.push(
            Tensor::scalar(total / r as f64),
            Op::CrossEntropyMean { logits, targets: targets.to_vec() },
            rg,
        )
    }

    /// Row-weighted cross-entropy sum: Σ_r w_r · CE(row_r, target_r).
    /// Rows with zero weight are skipped entirely.
    pub fn cross_entropy_weighted(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
    ) -> Var {
        let tl = self.value(logits);
        let (r, c) = (tl.rows(), tl.cols());
        assert_eq!(targets.len(), r, "one target per logits row");
        assert_eq!(weights.len(), r, "one weight per logits row");
        let mut total = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            if w == 0.0 {
                continue;
            }
            assert!(t < c, "class target {t} out of range 0..{c}");
            let row = &tl.data()[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += w * (lse - row[t]);
        }
        let rg = self.requires_grad(logits);
        self.push(
            Tensor::scalar(total),
            Op::CrossEntropyWeighted {
                logits,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// Element-weighted BCE-from-logits sum: Σ_e w_e · bce_e.
    pub fn bce_with_logits_weighted(
        &mut self,
        scores: Var,
        targets: &[f64],
        weights: &[f64],
    ) -> Var {
        let ts = self.value(scores);
        assert_eq!(targets.len(), ts.numel(), "bce target length mismatch");
        assert_eq!(weights.len(), ts.numel(), "bce weight length mismatch");
        let mut total = 0.0;
        for ((&s, &t), &w) in ts.data().iter().zip(targets).zip(weights) {
            if w == 0.0 {
                continue;
            }
            assert!((0.0..=1.0).contains(&t), "bce target {t} outside [0,1]");
            total += w * (s.max(0.0) - s * t + softplus(-s.abs()));
        }
        let rg = self.requires_grad(scores);
        self.push(
            Tensor::scalar(total),
            Op::BceWithLogitsWeighted {
                scores,
                targets: targets.to_vec(),
                weights: weights.to_vec(),
            },
            rg,
        )
    }

    /// Mean binary cross-entropy from logits against (possibly soft)
    /// targets in [0,1], in the stable max(s,0) − s·t + ln(1+e^{−|s|})
    /// form. `keep` masks cells out of the mean; an all-masked or empty
    /// matrix yields loss 0.
    pub fn bce_with_logits_mean(&mut self, scores: Var, targets: &Tensor, keep: Option<&[bool]>) -> Var {
        let ts = self.value(scores);
        assert_eq!(ts.shape(), targets.shape(), "bce target shape mismatch");
        if let Some(k) = keep {
            assert_eq!(k.len(), ts.numel(), "bce mask length mismatch");
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for (e, (&s, &t)) in ts.data().iter().zip(targets.data()).enumerate() {
            assert!((0.0..=1.0).contains(&t), "bce target {t} outside [0,1]");
            if keep.map_or(true, |k| k[e]) {
                total += s.max(0.0) - s * t + softplus(-s.abs());
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let rg = self.requires_grad(scores);
        self.push(
            Tensor::scalar(loss),
            Op::BceWithLogitsMean {
                scores,
                targets: targets.data().to_vec(),
                keep: keep.map(|k| k.to_vec()),
                count,
            },
            rg,
        )
    }

    /// Mean squared error, averaged over every element.
    pub fn mse_mean(&mut self, pred: Var, target: &Tensor) -> Var {
        let tp = self.value(pred);
        assert_eq!(tp.shape(), target.shape(), "mse target shape mismatch");
        let n = tp.numel() as f64;
        let total: f64 =
            tp.data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum();
        let rg = self.requires_grad(pred);
        self.push(
            Tensor::scalar(total / n),
            Op::MseMean { pred, target: target.data().to_vec() },
            rg,
        )
    }

    // ---- backward ----

    fn add_adj(&self, adj: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(buf) => {
                for (d, s) in buf.iter_mut().zip(g) {
                    *d += *s;
                }
            }
            slot => *slot = Some(g.to_vec()),
        }
    }

    /// Moves an owned gradient in when it is the first contribution,
    /// avoiding the zero-fill plus add of the slice path.
    fn add_adj_owned(&self, adj: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut adj[v.0] {
            Some(buf) => {
                for (d, s) in buf.iter_mut().zip(&g) {
                    *d += *s;
                }
            }
            slot => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar root. Every node that requires grad and
    /// is reachable from the root receives its gradient; calling `backward`
    /// again accumulates another full pass into the same buffers.
    pub fn backward(&mut self, root: Var) {
        assert!(
            self.value(root).is_scalar(),
            "backward root must be scalar, got shape {:?}",
            self.value(root).shape()
        );
        if !self.nodes[root.0].requires_grad {
            return;
        }
        // Pass-local adjoints keep repeated backward calls independent.
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = adj[i].take() else { continue };
            self.backward_op(i, &dy, &mut adj);
            let buf = self.grads[i].get_or_insert_with(|| vec![0.0; dy.len()]);
            for (d, s) in buf.iter_mut().zip(&dy) {
                *d += *s;
            }
        }
    }

    fn backward_op(&self, node: usize, dy: &[f64], adj: &mut [Option<Vec<f64>>]) {
        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.add_adj(adj, *a, dy);
                self.add_adj(adj, *b, dy);
            }
            Op::Sub(a, b) => {
                self.add_adj(adj, *a, dy);
                let neg: Vec<f64> = dy.iter().map(|v| -v).collect();
                self.add_adj_owned(adj, *b, neg);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let da: Vec<f64> = dy.iter().zip(tb.data()).map(|(g, y)| g * y).collect();
                let db: Vec<f64> = dy.iter().zip(ta.data()).map(|(g, x)| g * x).collect();
                self.add_adj_owned(adj, *a, da);
                self.add_adj_owned(adj, *b, db);
            }
            Op::Affine { x, mul } => {
                let dx: Vec<f64> = dy.iter().map(|g| g * mul).collect();
                self.add_adj_owned(adj, *x, dx);
            }
            Op::AddScaled { a, b, scale } => {
                self.add_adj(adj, *a, dy);
                let db: Vec<f64> = dy.iter().map(|g| g * scale).collect();
                self.add_adj_owned(adj, *b, db);
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    matmul_nt_acc(&mut da, dy, tb.data(), m, n, k);
                    self.add_adj_owned(adj, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    matmul_tn_acc(&mut db, ta.data(), dy, m, k, n);
                    self.add_adj_owned(adj, *b, db);
                }
            }
            Op::MatMulBatched { a, b, blocks } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let blocks = *blocks;
                let m = ta.rows() / blocks;
                let k = ta.cols();
                let n = tb.cols();
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; blocks * m * k];
                    for i in 0..blocks {
                        matmul_nt_acc(
                            &mut da[i * m * k..(i + 1) * m * k],
                            &dy[i * m * n..(i + 1) * m * n],
                            &tb.data()[i * k * n..(i + 1) * k * n],
                            m,
                            n,
                            k,
                        );
                    }
                    self.add_adj_owned(adj, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; blocks * k * n];
                    for i in 0..blocks {
                        matmul_tn_acc(
                            &mut db[i * k * n..(i + 1) * k * n],
                            &ta.data()[i * m * k..(i + 1) * m * k],
                            &dy[i * m * n..(i + 1) * m * n],
                            m,
                            k,
                            n,
                        );
                    }
                    self.add_adj_owned(adj, *b, db);
                }
            }
            Op::MatMulBatchedNt { a, b, blocks } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let blocks = *blocks;
                let m = ta.rows() / blocks;
                let n = ta.cols();
                let p = tb.rows() / blocks;
                if self.nodes[a.0].requires_grad {
                    // dA_i += dC_i · B_i
                    let mut da = vec![0.0; blocks * m * n];
                    for i in 0..blocks {
                        matmul_nn_acc(
                            &mut da[i * m * n..(i + 1) * m * n],
                            &dy[i * m * p..(i + 1) * m * p],
                            &tb.data()[i * p * n..(i + 1) * p * n],
                            m,
                            p,
                            n,
                        );
                    }
                    self.add_adj_owned(adj, *a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB_i += dC_iᵀ · A_i
                    let mut db = vec![0.0; blocks * p * n];
                    for i in 0..blocks {
                        matmul_tn_acc(
                            &mut db[i * p * n..(i + 1) * p * n],
                            &dy[i * m * p..(i + 1) * m * p],
                            &ta.data()[i * m * n..(i + 1) * m * n],
                            m,
                            p,
                            n,
                        );
                    }
                    self.add_adj_owned(adj, *b, db);
                }
            }
            Op::Transpose(x) => {
                let tx = self.value(*x);
                let (r, c) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; r * c];
                for i in 0..c {
                    for j in 0..r {
                        dx[j * c + i] = dy[i * r + j];
                    }
                }
                self.add_adj_owned(adj, *x, dx);
            }
            Op::Reshape(x) => {
                self.add_adj(adj, *x, dy);
            }
            Op::SliceCols { x, start, len } => {
                let tx = self.value(*x);
                let (r, c) = (tx.rows(), tx.cols());
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + len]
                        .copy_from_slice(&dy[i * len..(i + 1) * len]);
                }
                self.add_adj_owned(adj, *x, dx);
            }
            Op::ConcatCols(parts) => {
                let r = self.value(parts[0]).rows();
                let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
                let mut offset = 0usize;
                for p in parts {
                    let c = self.value(*p).cols();
                    let mut dp = vec![0.0; r * c];
                    for i in 0..r {
                        dp[i * c..(i + 1) * c]
                            .copy_from_slice(&dy[i * total + offset..i * total + offset + c]);
                    }
                    self.add_adj_owned(adj, *p, dp);
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0usize;
                for p in parts {
                    let n = self.value(*p).numel();
                    self.add_adj(adj, *p, &dy[offset..offset + n]);
                    offset += n;
                }
            }
            Op::GatherRows { table, idx } => {
                let tt = self.value(*table);
                let (r, c) = (tt.rows(), tt.cols());
                let mut dt = vec![0.0; r * c];
                for (i, &row) in idx.iter().enumerate() {
                    for j in 0..c {
                        dt[row * c + j] += dy[i * c + j];
                    }
                }
                self.add_adj_owned(adj, *table, dt);
            }
            Op::AddRowBroadcast { x, row } => {
                self.add_adj(adj, *x, dy);
                let c = self.value(*row).cols();
                let mut drow = vec![0.0; c];
                for chunk in dy.chunks(c) {
                    for (d, g) in drow.iter_mut().zip(chunk) {
                        *d += *g;
                    }
                }
                self.add_adj_owned(adj, *row, drow);
            }
            Op::Sigmoid(x) => {
                let y = self.nodes[node].value.get().data();
                let dx: Vec<f64> = dy.iter().zip(y).map(|(g, &v)| g * v * (1.0 - v)).collect();
                self.add_adj_owned(adj, *x, dx);
            }
            Op::Tanh(x) => {
                let y = self.nodes[node].value.get().data();
                let dx: Vec<f64> = dy.iter().zip(y).map(|(g, &v)| g * (1.0 - v * v)).collect();
                self.add_adj_owned(adj, *x, dx);
            }
            Op::Relu(x) => {
                let tx = self.value(*x);
                let dx: Vec<f64> = dy
                    .iter()
                    .zip(tx.data())
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.add_adj_owned(adj, *x, dx);
            }
            Op::Gelu(x) => {
                let tx = self.value(*x);
                let dx: Vec<f64> =
                    dy.iter().zip(tx.data()).map(|(g, &v)| g * gelu_grad_scalar(v)).collect();
                self.add_adj_owned(adj, *x, dx);
            }
            Op::SoftmaxRows { x } => {
                let y = self.nodes[node].value.get();
                let (r, c) = (y.rows(), y.cols());
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let yr = &y.data()[i * c..(i + 1) * c];
                    let gr = &dy[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dx[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.add_adj_owned(adj, *x, dx);
            }
            Op::LayerNorm { x, gain, bias, stats } => {
                let tx = self.value(*x);
                let tg = self.value(*gain);
                let (r, c) = (tx.rows(), tx.cols());
                let cf = c as f64;
                let mut dx = vec![0.0; r * c];
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                for i in 0..r {
                    let (mean, rstd) = stats[i];
                    let row = &tx.data()[i * c..(i + 1) * c];
                    let gr = &dy[i * c..(i + 1) * c];
                    let mut sum_dxhat = 0.0;
                    let mut sum_dxhat_xhat = 0.0;
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * tg.data()[j];
                        dg[j] += gr[j] * xhat;
                        db[j] += gr[j];
                        sum_dxhat += dxhat;
                        sum_dxhat_xhat += dxhat * xhat;
                    }
                    for j in 0..c {
                        let xhat = (row[j] - mean) * rstd;
                        let dxhat = gr[j] * tg.data()[j];
                        dx[i * c + j] =
                            rstd * (dxhat - sum_dxhat / cf - xhat * sum_dxhat_xhat / cf);
                    }
                }
                self.add_adj_owned(adj, *x, dx);
                self.add_adj_owned(adj, *gain, dg);
                self.add_adj_owned(adj, *bias, db);
            }
            Op::SumAll(x) => {
                let n = self.value(*x).numel();
                self.add_adj(adj, *x, &vec![dy[0]; n]);
            }
            Op::MeanAll(x) => {
                let n = self.value(*x).numel();
                self.add_adj(adj, *x, &vec![dy[0] / n as f64; n]);
            }
            Op::CrossEntropyMean { logits, targets } => {
                let tl = self.value(*logits);
                let (r, c) = (tl.rows(), tl.cols());
                let scale = dy[0] / r as f64;
                let mut dl = vec![0.0; r * c];
                for (i, &t) in targets.iter().enumerate() {
                    let row = &tl.data()[i * c..(i + 1) * c];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..c {
                        let p = (row[j] - max).exp() / sum;
                        dl[i * c + j] = scale * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.add_adj_owned(adj, *logits, dl);
            }
            Op::CrossEntropyWeighted { logits, targets, weights } => {
                let tl = self.value(*logits);
                let (r, c) = (tl.rows(), tl.cols());
                let mut dl = vec![0.0; r * c];
                for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let scale = dy[0] * w;
                    let row = &tl.data()[i * c..(i + 1) * c];
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for j in 0..c {
                        let prob = (row[j] - max).exp() / sum;
                        dl[i * c + j] = scale * (prob - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.add_adj_owned(adj, *logits, dl);
            }
            Op::BceWithLogitsWeighted { scores, targets, weights } => {
                let ts = self.value(*scores);
                let mut ds = vec![0.0; ts.numel()];
                for (e, ((&s, &t), &w)) in
                    ts.data().iter().zip(targets).zip(weights).enumerate()
                {
                    if w != 0.0 {
                        ds[e] = dy[0] * w * (sigmoid_scalar(s) - t);
                    }
                }
                self.add_adj_owned(adj, *scores, ds);
            }
            Op::BceWithLogitsMean { scores, targets, keep, count } => {
                let ts = self.value(*scores);
                let mut ds = vec![0.0; ts.numel()];
                if *count > 0 {
                    let scale = dy[0] / *count as f64;
                    for (e, (&s, &t)) in ts.data().iter().zip(targets).enumerate() {
                        if keep.as_ref().map_or(true, |k| k[e]) {
                            ds[e] = scale * (sigmoid_scalar(s) - t);
                        }
                    }
                }
                self.add_adj_owned(adj, *scores, ds);
            }
            Op::MseMean { pred, target } => {
                let tp = self.value(*pred);
                let n = tp.numel() as f64;
                let scale = dy[0] * 2.0 / n;
                let dp: Vec<f64> =
                    tp.data().iter().zip(target).map(|(p, t)| scale * (p - t)).collect();
                self.add_adj_owned(adj, *pred, dp);
            }
        }
    }
}
