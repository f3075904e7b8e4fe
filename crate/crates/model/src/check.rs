//! Finite-difference validation of whole-model gradients. Used by the
//! test suites; kept in the library so downstream crates can check their
//! own loss compositions.

use progsup_autodiff::{Tape, Var};

use crate::params::{Bound, ParamSet};

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Compares backward-pass parameter gradients of a scalar loss against
/// central finite differences on `samples_per_tensor` random components of
/// every parameter. Returns the worst relative error.
///
/// `forward` must be a pure function of the parameter set.
pub fn param_grad_check(
    params: &mut ParamSet,
    forward: impl Fn(&mut Bound) -> Var,
    h: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> f64 {
    // analytic pass
    let mut tape = Tape::new();
    let mut bound = Bound::new(&mut tape, params);
    let root = forward(&mut bound);
    assert!(bound.tape.value(root).is_scalar(), "loss must be scalar");
    bound.tape.backward(root);
    let analytic = bound.take_grads(params);
    drop(tape);

    let eval = |params: &ParamSet| -> f64 {
        let mut tape = Tape::new();
        let mut bound = Bound::new(&mut tape, params);
        let root = forward(&mut bound);
        tape.value(root).item()
    };

    let mut rng = seed;
    let mut worst = 0.0f64;
    for idx in 0..params.len() {
        let id = crate::params::ParamId(idx);
        let n = params.value(id).numel();
        for _ in 0..samples_per_tensor.min(n) {
            let j = (splitmix64(&mut rng) % n as u64) as usize;
            let orig = params.value(id).data()[j];
            params.value_mut(id).data_mut()[j] = orig + h;
            let plus = eval(params);
            params.value_mut(id).data_mut()[j] = orig - h;
            let minus = eval(params);
            params.value_mut(id).data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * h);
            let a = analytic[idx][j];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            worst = worst.max(err);
        }
    }
    worst
}
