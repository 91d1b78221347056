//! AdamW with decoupled weight decay, cosine learning-rate decay and global
//! norm clipping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::l2_norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(dim: usize, weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::config("optimizer", "moment dimension differs from parameters"));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + self.eps) + self.weight_decay * params[i]);
        }
        Ok(())
    }
}

/// `lr_end + (lr_start - lr_end) (1 + cos(pi t / T)) / 2`.
pub fn cosine_lr(step: usize, total: usize, lr_start: f64, lr_end: f64) -> f64 {
    if total == 0 {
        return lr_start;
    }
    let frac = step.min(total) as f64 / total as f64;
    lr_end + (lr_start - lr_end) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}

/// Rescales `grad` in place to norm at most `max_norm`; returns the norm
/// before clipping.
pub fn clip_global_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = l2_norm(grad);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0, 300, 0.05, 0.025), 0.05);
        assert!((cosine_lr(300, 300, 0.05, 0.025) - 0.025).abs() < 1e-15);
        assert!((cosine_lr(150, 300, 0.05, 0.025) - 0.0375).abs() < 1e-9);
        assert!((cosine_lr(1, 2, 1e-5, 5e-6) - 7.5e-6).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn cosine_is_nonincreasing(total in 1usize..500, lo in 1e-7f64..1e-3, span in 0.0f64..1e-2) {
            let hi = lo + span;
            let mut prev = f64::INFINITY;
            for t in 0..=total {
                let lr = cosine_lr(t, total, hi, lo);
                prop_assert!(lr <= prev + 1e-18);
                prop_assert!(lr >= lo - 1e-18 && lr <= hi + 1e-18);
                prev = lr;
            }
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // bias correction makes the first update lr * sign(g) when wd = 0
        let mut opt = AdamW::new(3, 0.0);
        let mut p = vec![1.0, -2.0, 0.5];
        opt.update(&mut p, &[0.3, -4.0, 0.0], 0.1).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-7);
        assert!((p[1] + 1.9).abs() < 1e-7);
        assert_eq!(p[2], 0.5);
    }

    #[test]
    fn hand_computed_two_steps_with_decay() {
        let mut opt = AdamW::new(1, 0.01);
        let mut p = vec![1.0];
        let lr = 0.01;
        opt.update(&mut p, &[0.5], lr).unwrap();
        opt.update(&mut p, &[-0.25], lr).unwrap();
        // independent recomputation
        let (b1, b2, eps, wd) = (0.9f64, 0.999f64, 1e-8, 0.01);
        let mut x = 1.0f64;
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for (t, g) in [(1, 0.5f64), (2, -0.25)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let step = (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            x -= lr * (step + wd * x);
        }
        assert!((p[0] - x).abs() < 1e-15);
    }

    #[test]
    fn clipping_rescales_only_above_threshold() {
        let mut g = vec![3.0, 4.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((l2_norm(&g) - 1.0).abs() < 1e-15);
        let mut h = vec![0.3, 0.4];
        clip_global_norm(&mut h, 1.0);
        assert_eq!(h, vec![0.3, 0.4]);
    }
}
