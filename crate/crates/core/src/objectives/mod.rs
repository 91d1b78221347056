//! Losses and analytic gradients.
//!
//! Every objective here is a sum of per-token terms `weight * log pi(y_j)`
//! (possibly through an importance ratio), so each one reduces to per-step
//! logit gradients followed by one policy backward pass.
//!
//! Sign conventions: all functions return a *loss* to minimize together with
//! its gradient. For preference pairs, `chosen` is the demonstration `y+` and
//! `rejected` is the on-policy rollout `y-`; the log-ratio margin is
//! `delta = (log pi(y+) - log ref(y+)) - (log pi(y-) - log ref(y-))` and the
//! implicit advantage is `z = beta * delta`.

mod dpo;
mod fest_grpo;
mod grpo;

use serde::{Deserialize, Serialize};

pub use dpo::{
    dpo_loss_grad, pair_weight, select_beta, select_beta_masked, PairInput, PairWeight, SolvabilityMasks,
    Z_CLAMP,
};
pub use fest_grpo::{fest_grpo_loss_grad, fest_grpo_weights, FestGrpoOptions, FestGrpoPair};
pub use grpo::{grpo_loss_grad, GrpoStats, PolicyItem};

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, TokenSeq};

/// Loss value with its flat parameter gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    pub fn zero(dim: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; dim],
        }
    }

    pub fn norm(&self) -> f64 {
        crate::math::l2_norm(&self.grad)
    }

    pub(crate) fn check_finite(self, what: &str) -> Result<Self> {
        if !self.loss.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(what.into()));
        }
        Ok(self)
    }
}

/// Asymmetric clip bounds: ratios are clipped to `[1 - low, 1 + high]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub low: f64,
    pub high: f64,
}

impl Default for ClipRange {
    fn default() -> Self {
        Self { low: 0.2, high: 0.3 }
    }
}

impl ClipRange {
    pub fn validate(&self) -> Result<()> {
        if !(self.low > 0.0 && self.high > self.low && self.low < 1.0) {
            return Err(Error::config("objective.clip", "need 0 < low < high and low < 1"));
        }
        Ok(())
    }
}

/// Per-rollout temperatures for the preference term: `unsolved` when the
/// whole group failed, `failed` when this rollout failed but a sibling
/// succeeded, `correct` when this rollout succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub unsolved: f64,
    pub failed: f64,
    pub correct: f64,
}

impl BetaSchedule {
    pub const FEST_DPO: BetaSchedule = BetaSchedule {
        unsolved: 0.1,
        failed: 0.01,
        correct: 0.01,
    };
    pub const FEST_GRPO: BetaSchedule = BetaSchedule {
        unsolved: 0.005,
        failed: 0.01,
        correct: 0.05,
    };

    pub fn uniform(beta: f64) -> Self {
        Self {
            unsolved: beta,
            failed: beta,
            correct: beta,
        }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.unsolved, self.failed, self.correct]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::config("objective.betas", "all betas must be positive"));
        }
        Ok(())
    }
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self::FEST_DPO
    }
}

/// Shared objective settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    /// Rollouts per prompt.
    pub group_size: usize,
    /// Constant token normalizer `M`; every response must fit in it.
    pub norm_len: usize,
    /// Weight `c` on the demonstration loss.
    pub coeff: f64,
    pub clip: ClipRange,
    pub betas: BetaSchedule,
    pub entropy_coeff: f64,
    /// Recompute pair weights with the live policy at every minibatch
    /// instead of freezing them at rollout time.
    pub live_weights: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            norm_len: 24,
            coeff: 0.01,
            clip: ClipRange::default(),
            betas: BetaSchedule::FEST_DPO,
            entropy_coeff: 1e-4,
            live_weights: true,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::config("objective.group_size", "need at least 2 rollouts per prompt"));
        }
        if self.norm_len == 0 {
            return Err(Error::config("objective.norm_len", "must be at least 1"));
        }
        if !(self.coeff >= 0.0 && self.coeff.is_finite()) {
            return Err(Error::config("objective.coeff", "must be a finite non-negative real"));
        }
        if !(self.entropy_coeff >= 0.0 && self.entropy_coeff.is_finite()) {
            return Err(Error::config("objective.entropy_coeff", "must be a finite non-negative real"));
        }
        self.clip.validate()?;
        self.betas.validate()
    }
}

/// `A_i = r_i - mean(r)`, without standard-deviation scaling.
pub fn group_advantages(rewards: &[f64]) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::config("group_size", "group advantages need at least 2 rollouts"));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len() as f64;
    Ok(rewards.iter().map(|r| r - mean).collect())
}

/// `-reward * grad log pi(y | x)`.
pub fn reinforce_grad(model: &PolicyModel, prompt: &TokenSeq, response: &TokenSeq, reward: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; model.dim()];
    if reward != 0.0 {
        let w = vec![-reward; response.len()];
        model.accumulate_score(prompt, response, &w, &mut grad)?;
    }
    Ok(grad)
}

/// Entropy bonus `-coeff * mean token entropy` over on-policy rollouts.
pub fn entropy_loss_grad(model: &PolicyModel, items: &[(&TokenSeq, &TokenSeq)], coeff: f64) -> Result<LossGrad> {
    let mut out = LossGrad::zero(model.dim());
    let tokens: usize = items.iter().map(|(_, y)| y.len()).sum();
    if coeff == 0.0 || tokens == 0 {
        return Ok(out);
    }
    let scale = -coeff / tokens as f64;
    for (x, y) in items {
        let trace = model.forward(x, y)?;
        out.loss += scale * trace.entropies().iter().sum::<f64>();
        let d = trace.entropy_dlogits(scale);
        model.backward(&trace, &d, &mut out.grad);
    }
    out.check_finite("entropy bonus")
}

/// `c * L_E + L_I + entropy`; the gradient is the same combination.
pub fn combined_loss(coeff: f64, demo: &LossGrad, answer: &LossGrad, entropy: &LossGrad) -> LossGrad {
    let grad = demo
        .grad
        .iter()
        .zip(&answer.grad)
        .zip(&entropy.grad)
        .map(|((e, i), h)| coeff * e + i + h)
        .collect();
    LossGrad {
        loss: coeff * demo.loss + answer.loss + entropy.loss,
        grad,
    }
}
