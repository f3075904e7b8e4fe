//! Named parameter storage. Parameters live behind `Arc` so worker tapes
//! can read them without copying; the optimizer mutates them between
//! batches once every tape has been dropped.

use std::sync::Arc;

use progsup_autodiff::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Default)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(Arc::new(t.with_grad()));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Arc<Tensor> {
        &self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Arc<Tensor>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    /// Mutable access for optimizer updates; clones only if a tape still
    /// holds the tensor.
    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    /// Replaces a parameter wholesale (checkpoint loading, re-init).
    pub fn set_value(&mut self, id: ParamId, t: Tensor) {
        assert_eq!(
            self.values[id.0].shape(),
            t.shape(),
            "shape mismatch replacing {}",
            self.names[id.0]
        );
        self.values[id.0] = Arc::new(t.with_grad());
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }
}

/// Deterministic initializer: projections are normal with fan-in scaling
/// (std 1/√d_in), embedding tables normal(0, 0.02), biases zero,
/// layer-norm gains one.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn normal(&mut self) -> f64 {
        let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
        let u2: f64 = self.rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Embedding-table initialization.
    pub fn weight(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| self.normal() * 0.02).collect();
        Tensor::new(vec![rows, cols], data)
    }

    /// Embedding table whose rows feed computation directly (no layer
    /// norm): unit-norm-scale rows, std 1/√d.
    pub fn table(&mut self, rows: usize, d: usize) -> Tensor {
        let std = 1.0 / (d as f64).sqrt();
        let data = (0..rows * d).map(|_| self.normal() * std).collect();
        Tensor::new(vec![rows, d], data)
    }

    /// Projection initialization with fan-in scaling.
    pub fn proj(&mut self, d_in: usize, d_out: usize) -> Tensor {
        let std = 1.0 / (d_in as f64).sqrt();
        let data = (0..d_in * d_out).map(|_| self.normal() * std).collect();
        Tensor::new(vec![d_in, d_out], data)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(rows, cols)
    }

    pub fn ones(&mut self, cols: usize) -> Tensor {
        Tensor::full(1, cols, 1.0)
    }
}

/// One tape's view of a parameter set: every parameter is registered as a
/// shared leaf exactly once.
pub struct Bound<'t> {
    pub tape: &'t mut Tape,
    vars: Vec<Var>,
}

impl<'t> Bound<'t> {
    pub fn new(tape: &'t mut Tape, params: &ParamSet) -> Self {
        let vars = params.values.iter().map(|v| tape.leaf_shared(Arc::clone(v))).collect();
        Bound { tape, vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients for every parameter, zeros where a parameter was unused.
    pub fn take_grads(self, params: &ParamSet) -> Vec<Vec<f64>> {
        let Bound { tape, vars } = self;
        vars.iter()
            .enumerate()
            .map(|(i, v)| {
                tape.take_grad(*v).unwrap_or_else(|| vec![0.0; params.values[i].numel()])
            })
            .collect()
    }
}
