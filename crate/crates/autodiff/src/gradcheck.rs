//! Central finite-difference gradient checking.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn eval(f: &impl Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars);
    tape.value(root).item()
}

// Relative above the floor, absolute below it: tiny true gradients can
// only be finite-difference-verified to absolute precision.
fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Compares tape gradients of a scalar-valued function against central
/// finite differences over every component of every input, returning the
/// worst relative error. Non-finite inputs are reported as NaN.
pub fn grad_check(f: impl Fn(&mut Tape, &[Var]) -> Var, inputs: &[Tensor], h: f64) -> f64 {
    grad_check_components(f, inputs, h, None, 0)
}

/// Like `grad_check` but limited to `max_per_input` randomly chosen
/// components per input tensor, for functions with many parameters.
pub fn grad_check_sampled(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    inputs: &[Tensor],
    h: f64,
    max_per_input: usize,
    seed: u64,
) -> f64 {
    grad_check_components(f, inputs, h, Some(max_per_input), seed)
}

fn grad_check_components(
    f: impl Fn(&mut Tape, &[Var]) -> Var,
    inputs: &[Tensor],
    h: f64,
    max_per_input: Option<usize>,
    seed: u64,
) -> f64 {
    if inputs.iter().any(|t| t.data().iter().any(|x| !x.is_finite())) {
        return f64::NAN;
    }

    // Analytic gradients from one taped pass, with grads forced on.
    let forced: Vec<Tensor> = inputs.iter().map(|t| t.clone().with_grad()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = forced.iter().map(|t| tape.leaf(t.clone())).collect();
    let root = f(&mut tape, &vars);
    assert!(tape.value(root).is_scalar(), "grad_check target must be scalar-valued");
    tape.backward(root);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(&forced)
        .map(|(v, t)| tape.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut rng = seed;
    let mut worst = 0.0f64;
    for (i, input) in forced.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match max_per_input {
            Some(m) if m < n => {
                (0..m).map(|_| (splitmix64(&mut rng) % n as u64) as usize).collect()
            }
            _ => (0..n).collect(),
        };
        for j in picks {
            let mut plus = forced.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = forced.clone();
            minus[i].data_mut()[j] -= h;
            let fd = (eval(&f, &plus) - eval(&f, &minus)) / (2.0 * h);
            worst = worst.max(relative_error(analytic[i][j], fd));
        }
    }
    worst
}
