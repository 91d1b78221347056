//! Token-level clipped surrogate with group-relative advantages.

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, TokenSeq};

use super::{ClipRange, LossGrad};

/// One rollout as seen by the clipped surrogate.
#[derive(Debug, Clone, Copy)]
pub struct PolicyItem<'a> {
    pub prompt: &'a TokenSeq,
    pub response: &'a TokenSeq,
    /// Temperature-1 per-token log-probs under the rollout snapshot.
    pub old_logprobs: &'a [f64],
    pub advantage: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct GrpoStats {
    pub tokens: usize,
    pub clipped: usize,
}

/// Whether the `min(ratio * A, clip(ratio) * A)` term takes the constant
/// clipped branch. Decided on the log-ratio.
pub(crate) fn is_clipped(log_ratio: f64, advantage: f64, clip: ClipRange) -> bool {
    (advantage > 0.0 && log_ratio > clip.high.ln_1p()) || (advantage < 0.0 && log_ratio < (-clip.low).ln_1p())
}

/// Per-token value of `min(ratio * A, clip(ratio) * A)` and the coefficient
/// of `grad log pi` in its derivative (zero on the clipped branch).
pub(crate) fn clipped_term(log_ratio: f64, advantage: f64, clip: ClipRange) -> Result<(f64, f64)> {
    if advantage == 0.0 {
        return Ok((0.0, 0.0));
    }
    if is_clipped(log_ratio, advantage, clip) {
        let bound = if advantage > 0.0 { 1.0 + clip.high } else { 1.0 - clip.low };
        return Ok((bound * advantage, 0.0));
    }
    let ratio = log_ratio.exp();
    if !ratio.is_finite() {
        return Err(Error::Numeric("importance ratio".into()));
    }
    Ok((ratio * advantage, ratio * advantage))
}

/// `-(1 / (count * M)) * sum_i sum_j min(ratio_ij * A_i, clip(ratio_ij) * A_i)`.
///
/// With the `n` rollouts of one group this is the usual `1 / (nM)` form; a
/// minibatch of mixed groups uses its own rollout count.
pub fn grpo_loss_grad(
    model: &PolicyModel,
    items: &[PolicyItem<'_>],
    clip: ClipRange,
    norm_len: usize,
) -> Result<(LossGrad, GrpoStats)> {
    let mut out = LossGrad::zero(model.dim());
    let mut stats = GrpoStats::default();
    if items.is_empty() {
        return Ok((out, stats));
    }
    let scale = 1.0 / (items.len() as f64 * norm_len as f64);
    for item in items {
        if item.response.len() > norm_len {
            return Err(Error::Length {
                len: item.response.len(),
                max: norm_len,
            });
        }
        if item.old_logprobs.len() != item.response.len() {
            return Err(Error::config("old_logprobs", "length differs from response"));
        }
        stats.tokens += item.response.len();
        if item.advantage == 0.0 {
            continue;
        }
        let trace = model.forward(item.prompt, item.response)?;
        let lps = trace.token_logprobs(item.response);
        let mut weights = Vec::with_capacity(lps.len());
        for (lp, old) in lps.iter().zip(item.old_logprobs) {
            let (value, coef) = clipped_term(lp - old, item.advantage, clip)?;
            if coef == 0.0 {
                stats.clipped += 1;
            }
            out.loss -= scale * value;
            weights.push(-scale * coef);
        }
        let d = trace.score_dlogits(item.response, &weights);
        model.backward(&trace, &d, &mut out.grad);
    }
    Ok((out.check_finite("GRPO loss")?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{PolicySpec, Vocab};

    #[test]
    fn clip_branches() {
        let c = ClipRange::default();
        let r = 1.5f64.ln();
        // A > 0 above 1 + high: constant 1.3 A, no gradient
        assert_eq!(clipped_term(r, 1.0, c).unwrap(), (1.3, 0.0));
        // A < 0 at the same ratio: unclipped, gradient flows
        let (v, g) = clipped_term(r, -1.0, c).unwrap();
        assert!((v + 1.5).abs() < 1e-12 && (g + 1.5).abs() < 1e-12);
        // A < 0 below 1 - low: constant, no gradient
        assert_eq!(clipped_term(0.5f64.ln(), -1.0, c).unwrap(), (-0.8, 0.0));
        // A > 0 below 1 - low: flows
        assert!(clipped_term(0.5f64.ln(), 1.0, c).unwrap().1 > 0.0);
    }

    #[test]
    fn ratio_grid_bounds() {
        let c = ClipRange::default();
        for k in 0..200 {
            let ratio = 0.01 + k as f64 * 0.05;
            let (up, _) = clipped_term(ratio.ln(), 2.0, c).unwrap();
            assert!(up <= 1.3 * 2.0 + 1e-12);
            let (down, _) = clipped_term(ratio.ln(), -2.0, c).unwrap();
            assert!(down <= -2.0 * ratio.max(0.8) + 1e-12);
        }
        // unbounded below for negative advantages
        assert!(clipped_term(50.0, -1.0, c).unwrap().0 < -1e20);
    }

    #[test]
    fn on_policy_loss_is_mean_advantage() {
        let m = PolicySpec::default().build(Vocab::anonymous(4).unwrap(), 4, 0).unwrap();
        let v = m.vocab();
        let x = v.seq(vec![0]).unwrap();
        let ys = [v.seq(vec![1, 3]).unwrap(), v.seq(vec![2, 2, 3]).unwrap()];
        let olds: Vec<Vec<f64>> = ys.iter().map(|y| m.token_logprobs(&x, y).unwrap()).collect();
        let adv = [0.5, -0.5];
        let items: Vec<PolicyItem> = (0..2)
            .map(|i| PolicyItem {
                prompt: &x,
                response: &ys[i],
                old_logprobs: &olds[i],
                advantage: adv[i],
            })
            .collect();
        let (lg, stats) = grpo_loss_grad(&m, &items, ClipRange::default(), 4).unwrap();
        let expected = -(0.5 * 2.0 - 0.5 * 3.0) / (2.0 * 4.0);
        assert!((lg.loss - expected).abs() < 1e-15);
        assert_eq!(stats, GrpoStats { tokens: 5, clipped: 0 });
        let zero: Vec<PolicyItem> = items.iter().map(|i| PolicyItem { advantage: 0.0, ..*i }).collect();
        let (z, _) = grpo_loss_grad(&m, &zero, ClipRange::default(), 4).unwrap();
        assert_eq!(z.loss, 0.0);
        assert!(z.grad.iter().all(|g| *g == 0.0));
    }
}
