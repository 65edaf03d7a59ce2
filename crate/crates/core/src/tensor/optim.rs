//! Optimizers and learning-rate schedules.
//!
//! Both optimizers hold per-parameter state indexed by position in the
//! parameter list, so a step is a pure function of (params, grads, state):
//! cloning the optimizer and restoring parameter data replays a step
//! exactly.

use super::{Scalar, Tensor};

/// Polynomial decay: `lr0 * (1 - step/total_steps)^exponent`, clamped to 0
/// once `step` reaches `total_steps`.
pub fn poly_lr(step: usize, total_steps: usize, lr0: f64, exponent: f64) -> f64 {
    assert!(total_steps > 0, "poly_lr: total_steps must be positive");
    if step >= total_steps {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total_steps as f64).powf(exponent)
}

/// SGD with Nesterov momentum and L2 weight decay folded into the gradient:
/// `g = grad + wd*p; v = mu*v + g; p = p - lr*(g + mu*v)`.
#[derive(Clone)]
pub struct SgdNesterov<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> SgdNesterov<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: &[&Tensor<T>], lr: f64) {
        if self.velocity.is_empty() {
            self.velocity = vec![None; params.len()];
        }
        assert_eq!(
            self.velocity.len(),
            params.len(),
            "SgdNesterov: parameter count changed between steps"
        );
        let mu = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        let lr = T::from_f64(lr);
        for (slot, p) in self.velocity.iter_mut().zip(params) {
            let grad = p.grad().expect("SgdNesterov: parameter has no gradient");
            let mut data = p.to_vec();
            let v = slot.get_or_insert_with(|| vec![T::zero(); data.len()]);
            assert_eq!(v.len(), data.len(), "SgdNesterov: parameter size changed");
            for ((d, vj), &gj) in data.iter_mut().zip(v.iter_mut()).zip(&grad) {
                let g = gj + wd * *d;
                *vj = mu * *vj + g;
                *d = *d - lr * (g + mu * *vj);
            }
            p.set_data(&data);
        }
    }
}

/// Adam with bias correction.
#[derive(Clone)]
pub struct Adam<T: Scalar> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Option<Vec<T>>>,
    v: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: &[&Tensor<T>]) {
        if self.m.is_empty() {
            self.m = vec![None; params.len()];
            self.v = vec![None; params.len()];
        }
        assert_eq!(self.m.len(), params.len(), "Adam: parameter count changed between steps");
        self.t += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let c1 = T::from_f64(1.0 / (1.0 - self.beta1.powi(self.t as i32)));
        let c2 = T::from_f64(1.0 / (1.0 - self.beta2.powi(self.t as i32)));
        let lr = T::from_f64(self.lr);
        let eps = T::from_f64(self.eps);
        for ((mslot, vslot), p) in self.m.iter_mut().zip(self.v.iter_mut()).zip(params) {
            let grad = p.grad().expect("Adam: parameter has no gradient");
            let mut data = p.to_vec();
            let m = mslot.get_or_insert_with(|| vec![T::zero(); data.len()]);
            let v = vslot.get_or_insert_with(|| vec![T::zero(); data.len()]);
            for (j, d) in data.iter_mut().enumerate() {
                let g = grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let mhat = m[j] * c1;
                let vhat = v[j] * c2;
                *d = *d - lr * mhat / (vhat.sqrt() + eps);
            }
            p.set_data(&data);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, Tensor};

    /// Run one backward pass that leaves `grad_value` as the gradient of `p`.
    fn inject_grad(p: &Tensor<f64>, grad_value: f64) {
        p.zero_grad();
        let c = Tensor::from_vec(vec![grad_value], &[1]);
        backward(&p.mul(&c).sum_all()).unwrap();
    }

    #[test]
    fn poly_lr_endpoints_and_clamp() {
        assert_eq!(poly_lr(0, 100, 5e-2, 0.9), 5e-2);
        assert_eq!(poly_lr(100, 100, 5e-2, 0.9), 0.0);
        assert_eq!(poly_lr(250, 100, 5e-2, 0.9), 0.0);
        let mid = poly_lr(50, 100, 5e-2, 0.9);
        assert!((mid - 5e-2 * 0.5f64.powf(0.9)).abs() < 1e-15);
    }

    #[test]
    fn poly_lr_non_increasing() {
        let mut prev = f64::INFINITY;
        for s in 0..=200 {
            let lr = poly_lr(s, 200, 5e-2, 0.9);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_nesterov_two_step_trace() {
        let p = Tensor::param(vec![1.0f64], &[1]);
        let mut opt = SgdNesterov::new(0.99, 3e-5);

        inject_grad(&p, 0.5);
        opt.step(&[&p], 5e-2);
        inject_grad(&p, -0.25);
        opt.step(&[&p], 5e-2);

        let g1 = 0.5 + 3e-5 * 1.0;
        let v1 = 0.99 * 0.0 + g1;
        let p1 = 1.0 - 5e-2 * (g1 + 0.99 * v1);
        let g2 = -0.25 + 3e-5 * p1;
        let v2 = 0.99 * v1 + g2;
        let p2 = p1 - 5e-2 * (g2 + 0.99 * v2);
        assert!((p.to_vec()[0] - p2).abs() < 1e-12, "got {} want {p2}", p.to_vec()[0]);
    }

    #[test]
    fn adam_three_step_trace() {
        let p = Tensor::param(vec![0.2f64], &[1]);
        let mut opt = Adam::new(1e-3, 0.0, 0.99, 1e-8);
        let grads = [0.3, -0.1, 0.2];
        for &g in &grads {
            inject_grad(&p, g);
            opt.step(&[&p]);
        }

        let (mut pv, mut m, mut v) = (0.2f64, 0.0f64, 0.0f64);
        for (i, &g) in grads.iter().enumerate() {
            let t = (i + 1) as i32;
            m = 0.0 * m + 1.0 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mhat = m / (1.0 - 0.0f64.powi(t));
            let vhat = v / (1.0 - 0.99f64.powi(t));
            pv -= 1e-3 * mhat / (vhat.sqrt() + 1e-8);
        }
        assert!((p.to_vec()[0] - pv).abs() < 1e-12, "got {} want {pv}", p.to_vec()[0]);
    }

    #[test]
    fn steps_replay_exactly_from_cloned_state() {
        let p = Tensor::param(vec![0.7f64, -0.3], &[2]);
        let mut opt = SgdNesterov::new(0.99, 3e-5);
        inject_grad_vec(&p, &[0.1, 0.2]);
        opt.step(&[&p], 5e-2);

        let saved_data = p.to_vec();
        let saved_opt = opt.clone();
        inject_grad_vec(&p, &[-0.05, 0.4]);
        opt.step(&[&p], 4e-2);
        let first = p.to_vec();

        p.set_data(&saved_data);
        let mut opt2 = saved_opt;
        inject_grad_vec(&p, &[-0.05, 0.4]);
        opt2.step(&[&p], 4e-2);
        assert_eq!(first, p.to_vec());
    }

    fn inject_grad_vec(p: &Tensor<f64>, gs: &[f64]) {
        p.zero_grad();
        let c = Tensor::from_vec(gs.to_vec(), &[gs.len()]);
        backward(&p.mul(&c).sum_all()).unwrap();
    }

    #[test]
    fn adam_with_zero_grad_leaves_param_nearly_still() {
        let p = Tensor::param(vec![1.0f64], &[1]);
        let mut opt = Adam::new(1e-3, 0.0, 0.99, 1e-8);
        inject_grad(&p, 0.0);
        opt.step(&[&p]);
        assert!((p.to_vec()[0] - 1.0).abs() < 1e-12);
    }
}
