//! Demonstration loss in its policy-gradient form: weighted SFT on the
//! demonstration plus a clipped negative-advantage term on each rollout.
//!
//! For pairs `(y+, y-_i)` with weights `w_i` the surrogate is
//!
//! ```text
//! L = -(1 / (P M)) [ sum_prompts W_x log pi(y+_x)
//!                  + sum_i sum_j min(ratio_ij * (-w_i), clip(ratio_ij) * (-w_i)) ]
//! ```
//!
//! where `W_x` sums `w_i` over the pairs sharing prompt `x`, so each
//! demonstration is scored once. Weights are constants of the surrogate.
//! At `theta = theta_old` its gradient is the pairwise preference gradient
//! divided by `M`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, TokenSeq};

use super::grpo::clipped_term;
use super::{ClipRange, LossGrad, PairInput, PairWeight};

/// Component toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FestGrpoOptions {
    /// Weighted SFT term on the demonstration.
    pub supervised: bool,
    /// Clipped negative-advantage term on the rollouts.
    pub on_policy: bool,
    /// Use `beta * sigmoid(-z)` rather than the constant `beta / 2`.
    pub decaying: bool,
}

impl FestGrpoOptions {
    pub const FULL: FestGrpoOptions = FestGrpoOptions {
        supervised: true,
        on_policy: true,
        decaying: true,
    };
}

#[derive(Debug, Clone, Copy)]
pub struct FestGrpoPair<'a> {
    /// Pairs with equal ids share one demonstration term.
    pub prompt_id: u64,
    pub prompt: &'a TokenSeq,
    pub chosen: &'a TokenSeq,
    pub rejected: &'a TokenSeq,
    pub rejected_old_logprobs: &'a [f64],
    pub ref_chosen: f64,
    pub ref_rejected: f64,
    pub beta: f64,
}

impl<'a> FestGrpoPair<'a> {
    pub fn as_pair(&self) -> PairInput<'a> {
        PairInput {
            prompt: self.prompt,
            chosen: self.chosen,
            rejected: self.rejected,
            ref_chosen: self.ref_chosen,
            ref_rejected: self.ref_rejected,
            beta: self.beta,
        }
    }
}

/// Pair weights under `model`. Without `decaying` the weight is pinned to
/// `beta / 2`, its value at `z = 0`; `z` is still recorded.
pub fn fest_grpo_weights(
    model: &PolicyModel,
    pairs: &[FestGrpoPair<'_>],
    opts: FestGrpoOptions,
) -> Result<Vec<PairWeight>> {
    pairs
        .iter()
        .map(|p| {
            let mut pw = p.as_pair().weight(model)?;
            if !opts.decaying {
                pw.w = 0.5 * pw.beta;
            }
            Ok(pw)
        })
        .collect()
}

/// Surrogate loss and gradient with the pair weights held fixed.
pub fn fest_grpo_loss_grad(
    model: &PolicyModel,
    pairs: &[FestGrpoPair<'_>],
    weights: &[f64],
    opts: FestGrpoOptions,
    clip: ClipRange,
    norm_len: usize,
) -> Result<LossGrad> {
    if weights.len() != pairs.len() {
        return Err(Error::config("weights", "one weight per pair required"));
    }
    let mut out = LossGrad::zero(model.dim());
    if pairs.is_empty() {
        return Ok(out);
    }
    for p in pairs {
        for y in [p.chosen, p.rejected] {
            if y.len() > norm_len {
                return Err(Error::Length {
                    len: y.len(),
                    max: norm_len,
                });
            }
        }
    }
    let scale = 1.0 / (pairs.len() as f64 * norm_len as f64);

    if opts.supervised {
        let mut by_prompt: BTreeMap<u64, (usize, f64)> = BTreeMap::new();
        for (i, (p, w)) in pairs.iter().zip(weights).enumerate() {
            by_prompt.entry(p.prompt_id).or_insert((i, 0.0)).1 += w;
        }
        for (first, total) in by_prompt.into_values() {
            if total == 0.0 {
                continue;
            }
            let p = &pairs[first];
            let trace = model.forward(p.prompt, p.chosen)?;
            out.loss -= scale * total * trace.seq_logprob(p.chosen);
            let tw = vec![-scale * total; p.chosen.len()];
            model.backward(&trace, &trace.score_dlogits(p.chosen, &tw), &mut out.grad);
        }
    }

    if opts.on_policy {
        for (p, &w) in pairs.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            if p.rejected_old_logprobs.len() != p.rejected.len() {
                return Err(Error::config("rejected_old_logprobs", "length differs from response"));
            }
            let trace = model.forward(p.prompt, p.rejected)?;
            let lps = trace.token_logprobs(p.rejected);
            let mut tw = Vec::with_capacity(lps.len());
            for (lp, old) in lps.iter().zip(p.rejected_old_logprobs) {
                let (value, coef) = clipped_term(lp - old, -w, clip)?;
                out.loss -= scale * value;
                tw.push(-scale * coef);
            }
            model.backward(&trace, &trace.score_dlogits(p.rejected, &tw), &mut out.grad);
        }
    }
    out.check_finite("FEST-GRPO surrogate")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::max_abs_diff;
    use crate::objectives::dpo_loss_grad;
    use crate::policy::{PolicySpec, Vocab};
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn matches_pairwise_gradient_at_snapshot() {
        let mut m = PolicySpec::TabularNgram {
            window: 1,
            prompt_buckets: 4,
        }
        .build(Vocab::anonymous(4).unwrap(), 5, 0)
        .unwrap();
        let mut r = rng::substream(17, &[]);
        for p in m.params_mut() {
            *p = r.gen_range(-1.0..1.0);
        }
        let reference = m.snapshot();
        for p in m.params_mut() {
            *p += r.gen_range(-0.3..0.3);
        }
        let v = m.vocab().clone();
        let x = [v.seq(vec![0]).unwrap(), v.seq(vec![1, 2]).unwrap()];
        let plus = [v.seq(vec![1, 1, 3]).unwrap(), v.seq(vec![0, 3]).unwrap()];
        let minus = [
            v.seq(vec![2, 3]).unwrap(),
            v.seq(vec![0, 0, 0, 0, 0]).unwrap(),
            v.seq(vec![3]).unwrap(),
        ];
        let olds: Vec<Vec<f64>> = (0..3)
            .map(|i| m.token_logprobs(&x[i / 2], &minus[i]).unwrap())
            .collect();
        let pairs: Vec<FestGrpoPair> = (0..3)
            .map(|i| FestGrpoPair {
                prompt_id: (i / 2) as u64,
                prompt: &x[i / 2],
                chosen: &plus[i / 2],
                rejected: &minus[i],
                rejected_old_logprobs: &olds[i],
                ref_chosen: reference.seq_logprob(&x[i / 2], &plus[i / 2]).unwrap(),
                ref_rejected: reference.seq_logprob(&x[i / 2], &minus[i]).unwrap(),
                beta: 0.1 + 0.2 * i as f64,
            })
            .collect();
        let dpo: Vec<PairInput> = pairs.iter().map(|p| p.as_pair()).collect();
        let (d, pw) = dpo_loss_grad(&m, &dpo).unwrap();
        let w: Vec<f64> = pw.iter().map(|p| p.w).collect();
        let g = fest_grpo_loss_grad(&m, &pairs, &w, FestGrpoOptions::FULL, ClipRange::default(), 6).unwrap();
        let scaled: Vec<f64> = g.grad.iter().map(|x| x * 6.0).collect();
        assert!(max_abs_diff(&scaled, &d.grad) < 1e-12);

        let zero = fest_grpo_loss_grad(&m, &pairs, &[0.0; 3], FestGrpoOptions::FULL, ClipRange::default(), 6).unwrap();
        assert!(zero.grad.iter().all(|x| *x == 0.0));
    }
}
