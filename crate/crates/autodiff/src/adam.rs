//! Adam with bias correction.

use crate::tensor::Tensor;

/// Per-parameter first/second moment buffers plus the shared step counter.
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh state for parameters of the given element counts.
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Advances the shared step counter; call once per optimizer step,
    /// before updating the individual parameters.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Applies the bias-corrected update to one parameter.
    pub fn update_param(&mut self, idx: usize, param: &mut [f64], grad: &[f64], lr: f64) {
        assert!(self.t >= 1, "begin_step must be called before update_param");
        assert_eq!(param.len(), grad.len(), "gradient length mismatch");
        assert_eq!(param.len(), self.m[idx].len(), "state length mismatch for param {idx}");
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let m = &mut self.m[idx];
        let v = &mut self.v[idx];
        for i in 0..param.len() {
            m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
            v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            param[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Serializes moments for checkpointing: (first, second) per parameter.
    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Restores moments and step counter from a checkpoint.
    pub fn restore(&mut self, m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64) {
        assert_eq!(m.len(), self.m.len());
        assert_eq!(v.len(), self.v.len());
        self.m = m;
        self.v = v;
        self.t = t;
    }
}

/// One whole optimizer step over a parameter list.
pub fn adam_step(params: &mut [Tensor], grads: &[Vec<f64>], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.begin_step();
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update_param(i, p.data_mut(), g, lr);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar-loop reference trace of two Adam steps with constant gradient.
    fn reference_two_steps(theta0: f64, g: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut theta = theta0;
        let (mut m, mut v) = (0.0, 0.0);
        for t in 1..=2u32 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let m_hat = m / (1.0 - b1.powi(t as i32));
            let v_hat = v / (1.0 - b2.powi(t as i32));
            theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        theta
    }

    #[test]
    fn first_step_with_unit_gradient_moves_by_lr() {
        let mut p = vec![Tensor::row(&[0.3, -0.7]).with_grad()];
        let mut st = AdamState::new(&[2]);
        adam_step(&mut p, &[vec![1.0, 1.0]], &mut st, 0.01);
        // bias-corrected m̂ = v̂ = 1, so the move is lr up to eps
        assert!((p[0].data()[0] - (0.3 - 0.01)).abs() < 1e-9);
        assert!((p[0].data()[1] - (-0.7 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![Tensor::row(&[1.0, 2.0, 3.0]).with_grad()];
        let mut st = AdamState::new(&[3]);
        for _ in 0..5 {
            adam_step(&mut p, &[vec![0.0; 3]], &mut st, 0.1);
        }
        assert_eq!(p[0].data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn two_steps_match_scalar_reference_trace() {
        let mut p = vec![Tensor::row(&[0.5]).with_grad()];
        let mut st = AdamState::new(&[1]);
        let g = vec![0.37];
        adam_step(&mut p, &[g.clone()], &mut st, 0.003);
        adam_step(&mut p, &[g.clone()], &mut st, 0.003);
        let expect = reference_two_steps(0.5, 0.37, 0.003);
        assert!((p[0].data()[0] - expect).abs() < 1e-12);
    }
}
