//! The preference-loss gradient written as a weighted likelihood step on the
//! demonstration plus a negative-reward policy-gradient step on the rollout.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objectives::{dpo_loss_grad, PairInput};
use crate::policy::{PolicyModel, PolicySpec, TokenSeq, Vocab};
use crate::rng;

use super::fd::{perturb, random_prompt, random_response, MAX_LEN, VOCAB};

/// `-mean_pairs [w grad log pi(y+) - w grad log pi(y-)]` with
/// `w = beta / (1 + e^z)` computed from scratch.
pub fn decomposed_grad(model: &PolicyModel, pairs: &[PairInput<'_>]) -> Result<Vec<f64>> {
    let mut g = vec![0.0; model.dim()];
    let n = pairs.len() as f64;
    for p in pairs {
        let up = model.seq_logprob(p.prompt, p.chosen)? - p.ref_chosen;
        let down = model.seq_logprob(p.prompt, p.rejected)? - p.ref_rejected;
        let z = p.beta * (up - down);
        let w = p.beta / (1.0 + z.exp());
        let gp = model.logprob_grad(p.prompt, p.chosen)?;
        let gm = model.logprob_grad(p.prompt, p.rejected)?;
        for i in 0..g.len() {
            g[i] += (-w * gp[i] + w * gm[i]) / n;
        }
    }
    Ok(g)
}

/// Largest absolute coordinate gap between the preference-loss gradient and
/// its decomposition.
pub fn decomposition_deviation(model: &PolicyModel, pairs: &[PairInput<'_>]) -> Result<f64> {
    let (lg, _) = dpo_loss_grad(model, pairs)?;
    let d = decomposed_grad(model, pairs)?;
    Ok(lg.grad.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub trials: usize,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub const DECOMPOSITION_TOL: f64 = 1e-10;

/// One random tabular pair per trial with beta log-uniform in `[1e-3, 10]`.
pub fn decomposition_check(seed: u64, trials: usize) -> Result<DecompositionReport> {
    let vocab = Vocab::anonymous(VOCAB)?;
    let spec = PolicySpec::TabularNgram {
        window: 1,
        prompt_buckets: 3,
    };
    let mut worst: f64 = 0.0;
    for t in 0..trials as u64 {
        let mut r = rng::substream(seed, &[rng::tag::CHECK, 0xDEC0, t]);
        let mut model = spec.build(vocab.clone(), MAX_LEN, 0)?;
        perturb(&mut model, 1.5, &mut r, false);
        let mut reference = model.clone();
        perturb(&mut reference, 1.0, &mut r, true);
        let x: TokenSeq = random_prompt(&mut r);
        let chosen = random_response(&mut r);
        let rejected = random_response(&mut r);
        let beta = 10f64.powf(r.gen_range(-3.0..1.0));
        let pair = PairInput {
            prompt: &x,
            chosen: &chosen,
            rejected: &rejected,
            ref_chosen: reference.seq_logprob(&x, &chosen)?,
            ref_rejected: reference.seq_logprob(&x, &rejected)?,
            beta,
        };
        worst = worst.max(decomposition_deviation(&model, &[pair])?);
    }
    Ok(DecompositionReport {
        trials,
        max_deviation: worst,
        tolerance: DECOMPOSITION_TOL,
        pass: worst < DECOMPOSITION_TOL,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_trials_within_tolerance() {
        let rep = decomposition_check(7, 100).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn equal_margins_reduce_to_half_beta() {
        let vocab = Vocab::anonymous(VOCAB).unwrap();
        let mut r = rng::substream(1, &[]);
        let mut m = PolicySpec::default().build(vocab, MAX_LEN, 0).unwrap();
        perturb(&mut m, 1.0, &mut r, false);
        let x = random_prompt(&mut r);
        let (a, b) = (random_response(&mut r), random_response(&mut r));
        // reference equal to the policy makes both margins zero
        let pair = PairInput {
            prompt: &x,
            chosen: &a,
            rejected: &b,
            ref_chosen: m.seq_logprob(&x, &a).unwrap(),
            ref_rejected: m.seq_logprob(&x, &b).unwrap(),
            beta: 0.3,
        };
        let (lg, _) = dpo_loss_grad(&m, &[pair]).unwrap();
        let ga = m.logprob_grad(&x, &a).unwrap();
        let gb = m.logprob_grad(&x, &b).unwrap();
        for i in 0..ga.len() {
            assert!((lg.grad[i] + 0.15 * (ga[i] - gb[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_vanishes_linearly_in_beta() {
        let vocab = Vocab::anonymous(VOCAB).unwrap();
        let mut r = rng::substream(2, &[]);
        let mut m = PolicySpec::default().build(vocab, MAX_LEN, 0).unwrap();
        perturb(&mut m, 1.0, &mut r, false);
        let x = random_prompt(&mut r);
        let (a, b) = (random_response(&mut r), random_response(&mut r));
        let norm = |beta: f64| {
            let pair = PairInput {
                prompt: &x,
                chosen: &a,
                rejected: &b,
                ref_chosen: -1.0,
                ref_rejected: -2.0,
                beta,
            };
            dpo_loss_grad(&m, &[pair]).unwrap().0.norm()
        };
        let (n1, n2) = (norm(1e-6), norm(1e-7));
        assert!(n1 < 1e-5);
        assert!((n1 / n2 - 10.0).abs() < 1e-4);
    }
}
