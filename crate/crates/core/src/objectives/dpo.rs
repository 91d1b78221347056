//! Pairwise preference loss, pair weights and the solvability-based beta rule.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::math::{log_sigmoid, sigmoid};
use crate::policy::{PolicyModel, TokenSeq};

use super::{BetaSchedule, LossGrad};

/// Implicit advantages beyond this magnitude are clamped before the sigmoid.
pub const Z_CLAMP: f64 = 50.0;

/// Weight record for one preference pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairWeight {
    pub beta: f64,
    /// `(log pi(y+) - log ref(y+)) - (log pi(y-) - log ref(y-))`.
    pub delta: f64,
    /// `beta * delta`, before clamping.
    pub z: f64,
    /// `beta * sigmoid(-z)` evaluated at the clamped `z`.
    pub w: f64,
    pub clamped: bool,
}

pub fn pair_weight(r_plus: f64, r_minus: f64, beta: f64) -> PairWeight {
    let delta = r_plus - r_minus;
    let z = beta * delta;
    let clamped = z.abs() > Z_CLAMP;
    let zc = z.clamp(-Z_CLAMP, Z_CLAMP);
    PairWeight {
        beta,
        delta,
        z,
        w: beta * sigmoid(-zc),
        clamped,
    }
}

/// Reward masks for one batch of groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolvabilityMasks {
    /// `correct[i][j]`: rollout `j` of prompt `i` was rewarded.
    pub correct: Vec<Vec<bool>>,
    /// `solvable[i]`: some rollout of prompt `i` was rewarded.
    pub solvable: Vec<bool>,
}

impl SolvabilityMasks {
    pub fn from_rewards(rewards: &[Vec<f64>]) -> Self {
        let correct: Vec<Vec<bool>> = rewards.iter().map(|g| g.iter().map(|&r| r > 0.0).collect()).collect();
        let solvable = correct.iter().map(|g| g.iter().any(|&c| c)).collect();
        Self { correct, solvable }
    }
}

/// Three-branch rule: unsolved group, failed rollout in a solvable group,
/// correct rollout.
pub fn select_beta(masks: &SolvabilityMasks, i: usize, j: usize, betas: &BetaSchedule) -> f64 {
    if masks.correct[i][j] {
        betas.correct
    } else if masks.solvable[i] {
        betas.failed
    } else {
        betas.unsolved
    }
}

/// The same rule written as the mask blend
/// `(b1 (1 - s) + b2 s)(1 - c) + b3 c`.
pub fn select_beta_masked(masks: &SolvabilityMasks, i: usize, j: usize, betas: &BetaSchedule) -> f64 {
    let s = masks.solvable[i] as u8 as f64;
    let c = masks.correct[i][j] as u8 as f64;
    (betas.unsolved * (1.0 - s) + betas.failed * s) * (1.0 - c) + betas.correct * c
}

/// One preference pair with reference log-probs precomputed.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'a> {
    pub prompt: &'a TokenSeq,
    pub chosen: &'a TokenSeq,
    pub rejected: &'a TokenSeq,
    pub ref_chosen: f64,
    pub ref_rejected: f64,
    pub beta: f64,
}

impl PairInput<'_> {
    /// Live pair weight under `model`.
    pub fn weight(&self, model: &PolicyModel) -> Result<PairWeight> {
        let rp = model.seq_logprob(self.prompt, self.chosen)? - self.ref_chosen;
        let rm = model.seq_logprob(self.prompt, self.rejected)? - self.ref_rejected;
        Ok(pair_weight(rp, rm, self.beta))
    }
}

/// `-mean_pairs log sigmoid(beta r+ - beta r-)`, gradient
/// `-mean_pairs w (grad log pi(y+) - grad log pi(y-))`.
pub fn dpo_loss_grad(model: &PolicyModel, pairs: &[PairInput<'_>]) -> Result<(LossGrad, Vec<PairWeight>)> {
    let mut out = LossGrad::zero(model.dim());
    let mut weights = Vec::with_capacity(pairs.len());
    if pairs.is_empty() {
        return Ok((out, weights));
    }
    let scale = 1.0 / pairs.len() as f64;
    for p in pairs {
        let tp = model.forward(p.prompt, p.chosen)?;
        let tm = model.forward(p.prompt, p.rejected)?;
        let rp = tp.seq_logprob(p.chosen) - p.ref_chosen;
        let rm = tm.seq_logprob(p.rejected) - p.ref_rejected;
        let pw = pair_weight(rp, rm, p.beta);
        out.loss -= scale * log_sigmoid(pw.z);
        let up = vec![-scale * pw.w; p.chosen.len()];
        model.backward(&tp, &tp.score_dlogits(p.chosen, &up), &mut out.grad);
        let down = vec![scale * pw.w; p.rejected.len()];
        model.backward(&tm, &tm.score_dlogits(p.rejected, &down), &mut out.grad);
        weights.push(pw);
    }
    Ok((out.check_finite("DPO loss")?, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_margins_give_half_beta() {
        let w = pair_weight(0.3, 0.3, 0.1);
        assert_eq!(w.z, 0.0);
        assert!((w.w - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_limits_and_clamp() {
        let hi = pair_weight(1e4, 0.0, 0.1);
        assert!(hi.clamped && hi.w < 1e-22 && hi.w > 0.0);
        let lo = pair_weight(-1e4, 0.0, 0.1);
        assert!(lo.clamped && (lo.w - 0.1).abs() < 1e-20);
        assert!(!pair_weight(400.0, 0.0, 0.1).clamped);
    }

    #[test]
    fn beta_examples() {
        let b = BetaSchedule::FEST_DPO;
        let m = SolvabilityMasks::from_rewards(&[vec![0.0; 4], vec![0.0, 1.0, 0.0, 0.0]]);
        for j in 0..4 {
            assert_eq!(select_beta(&m, 0, j, &b), 0.1);
        }
        assert_eq!(select_beta(&m, 1, 0, &b), 0.01);
        assert_eq!(select_beta(&m, 1, 1, &b), b.correct);
        assert_eq!(select_beta(&m, 1, 1, &BetaSchedule::FEST_GRPO), 0.05);
    }

    #[test]
    fn beta_truth_table_exhaustive() {
        let b = BetaSchedule {
            unsolved: 0.3,
            failed: 0.02,
            correct: 7.0,
        };
        for n in 1..=4usize {
            for code in 0..(1u32 << n) {
                let rewards: Vec<f64> = (0..n).map(|j| ((code >> j) & 1) as f64).collect();
                let m = SolvabilityMasks::from_rewards(&[rewards.clone()]);
                for j in 0..n {
                    let any = rewards.iter().any(|&r| r == 1.0);
                    let expected = match (any, rewards[j] == 1.0) {
                        (false, _) => b.unsolved,
                        (true, false) => b.failed,
                        (true, true) => b.correct,
                    };
                    assert_eq!(select_beta(&m, 0, j, &b), expected);
                    assert_eq!(select_beta_masked(&m, 0, j, &b), expected);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn weight_strictly_inside_zero_beta(rp in -300.0f64..300.0, rm in -300.0f64..300.0, beta in 1e-3f64..0.1) {
            let w = pair_weight(rp, rm, beta);
            prop_assume!(w.z.abs() <= 30.0);
            prop_assert!(w.w > 0.0 && w.w < beta);
            prop_assert!((w.w - beta / (1.0 + w.z.exp())).abs() <= 1e-12 * beta.max(1.0));
        }
    }
}
