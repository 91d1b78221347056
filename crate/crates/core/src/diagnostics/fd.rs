//! Central finite differences against analytic gradients, plus the random
//! instance generators used by the gradient-check suite.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::objectives::{
    combined_loss, dpo_loss_grad, entropy_loss_grad, fest_grpo_loss_grad, fest_grpo_weights, group_advantages,
    grpo_loss_grad, reinforce_grad, select_beta, BetaSchedule, ClipRange, FestGrpoOptions, FestGrpoPair, LossGrad,
    PairInput, PolicyItem, SolvabilityMasks,
};
use crate::policy::{PolicyModel, PolicySpec, TokenSeq, Vocab};
use crate::rng::{self, Rng};

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub pass: bool,
    /// Coordinates compared (those with `max(|analytic|, |numeric|) > 1e-8`).
    pub checked: usize,
    pub worst_coord: Option<usize>,
    pub worst_rel_err: f64,
    pub worst_abs_err: f64,
    /// Set when the loss was non-finite at a perturbed point.
    pub nonfinite_at: Option<usize>,
}

/// Settings for [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub step: f64,
    pub rel_tol: f64,
    /// Absolute slack for the round-off floor of the difference quotient.
    pub abs_tol: f64,
    pub min_magnitude: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            abs_tol: 1e-9,
            min_magnitude: 1e-8,
        }
    }
}

/// Compares `analytic` with central differences of `loss` around `x0`.
///
/// A coordinate passes when `|a - n| <= rel_tol * max(|a|, |n|)` or
/// `|a - n| <= abs_tol`. Only coordinates where either side exceeds
/// `min_magnitude` are counted.
pub fn finite_difference_check<F>(loss: F, x0: &[f64], analytic: &[f64], s: FdSettings) -> FdReport
where
    F: Fn(&[f64]) -> Option<f64>,
{
    let mut x = x0.to_vec();
    let mut rep = FdReport {
        pass: true,
        checked: 0,
        worst_coord: None,
        worst_rel_err: 0.0,
        worst_abs_err: 0.0,
        nonfinite_at: None,
    };
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + s.step;
        let fp = loss(&x);
        x[i] = orig - s.step;
        let fm = loss(&x);
        x[i] = orig;
        let (Some(fp), Some(fm)) = (fp, fm) else {
            rep.pass = false;
            rep.nonfinite_at = Some(i);
            return rep;
        };
        if !fp.is_finite() || !fm.is_finite() {
            rep.pass = false;
            rep.nonfinite_at = Some(i);
            return rep;
        }
        let numeric = (fp - fm) / (2.0 * s.step);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        if scale <= s.min_magnitude {
            continue;
        }
        rep.checked += 1;
        let abs = (a - numeric).abs();
        let rel = abs / scale;
        let ok = abs <= s.rel_tol * scale || abs <= s.abs_tol;
        // report the worst failing coordinate, or the worst overall if none fail
        let key = (!ok, rel);
        let worse = match rep.worst_coord {
            None => true,
            Some(_) => key > (!rep.pass, rep.worst_rel_err),
        };
        if !ok {
            rep.pass = false;
        }
        if worse {
            rep.worst_coord = Some(i);
            rep.worst_rel_err = rel;
            rep.worst_abs_err = abs;
        }
    }
    rep
}

/// Model shapes exercised by the suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Tabular,
    Recurrent,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Tabular => "tabular",
            ModelKind::Recurrent => "recurrent",
        }
    }
}

pub(crate) const VOCAB: usize = 4;
pub(crate) const MAX_LEN: usize = 5;

/// Random policy with moderate logits.
pub fn random_model(kind: ModelKind, rng: &mut Rng) -> PolicyModel {
    let vocab = Vocab::anonymous(VOCAB).expect("valid size");
    let (spec, scale) = match kind {
        ModelKind::Tabular => (
            PolicySpec::TabularNgram {
                window: 1,
                prompt_buckets: 3,
            },
            1.0,
        ),
        ModelKind::Recurrent => (PolicySpec::Recurrent { hidden: 4 }, 0.7),
    };
    let mut m = spec.build(vocab, MAX_LEN, 0).expect("valid spec");
    perturb(&mut m, scale, rng, false);
    m
}

/// Sets every parameter to uniform noise in `[-scale, scale]`, or adds the
/// noise when `add` is set.
pub fn perturb(m: &mut PolicyModel, scale: f64, rng: &mut Rng, add: bool) {
    for p in m.params_mut() {
        let u = rng.gen_range(-scale..scale);
        *p = if add { *p + u } else { u };
    }
}

pub fn random_prompt(rng: &mut Rng) -> TokenSeq {
    let len = rng.gen_range(1..=3);
    let tokens = (0..len).map(|_| rng.gen_range(0..VOCAB as u32 - 1)).collect();
    Vocab::anonymous(VOCAB).unwrap().seq(tokens).unwrap()
}

/// Random response: EOS-terminated with probability 0.7, else truncated at
/// a random length.
pub fn random_response(rng: &mut Rng) -> TokenSeq {
    let eos = VOCAB as u32 - 1;
    let len = rng.gen_range(1..=MAX_LEN);
    let mut tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..eos)).collect();
    if rng.gen_bool(0.7) {
        *tokens.last_mut().unwrap() = eos;
    }
    Vocab::anonymous(VOCAB).unwrap().seq(tokens).unwrap()
}

/// Objective families with a registered check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    Policy,
    Grpo,
    Dpo,
    FestDpo,
    FestGrpo,
    Reinforce,
    Entropy,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Policy,
        Objective::Grpo,
        Objective::Dpo,
        Objective::FestDpo,
        Objective::FestGrpo,
        Objective::Reinforce,
        Objective::Entropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Objective::Policy => "policy",
            Objective::Grpo => "grpo",
            Objective::Dpo => "dpo",
            Objective::FestDpo => "fest-dpo",
            Objective::FestGrpo => "fest-grpo",
            Objective::Reinforce => "reinforce",
            Objective::Entropy => "entropy",
        }
    }
}

type LossFn = Box<dyn Fn(&PolicyModel) -> Result<LossGrad>>;

/// A loss over a fixed random instance; `eval` returns loss and gradient at
/// the given policy.
pub struct Instance {
    pub model: PolicyModel,
    pub eval: LossFn,
}

impl Instance {
    pub fn loss_at(&self, params: &[f64]) -> Option<f64> {
        let mut m = self.model.clone();
        m.set_params(params).ok()?;
        (self.eval)(&m).ok().map(|l| l.loss)
    }

    pub fn check(&self, s: FdSettings) -> Result<(LossGrad, FdReport)> {
        let lg = (self.eval)(&self.model)?;
        let rep = finite_difference_check(|p| self.loss_at(p), self.model.params(), &lg.grad, s);
        Ok((lg, rep))
    }
}

/// Keeps log-ratios at least this far from a clip boundary so differences
/// never straddle a kink.
const KINK_MARGIN: f64 = 1e-3;

fn near_kink(model: &PolicyModel, old: &PolicyModel, prompt: &TokenSeq, y: &TokenSeq, clip: ClipRange) -> Result<bool> {
    let lp = model.token_logprobs(prompt, y)?;
    let lo = old.token_logprobs(prompt, y)?;
    Ok(lp.iter().zip(&lo).any(|(a, b)| {
        let r = a - b;
        (r - clip.high.ln_1p()).abs() < KINK_MARGIN || (r - (-clip.low).ln_1p()).abs() < KINK_MARGIN
    }))
}

struct Group {
    prompt: TokenSeq,
    responses: Vec<TokenSeq>,
    old_logprobs: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

fn random_group(old: &PolicyModel, n: usize, rng: &mut Rng) -> Result<Group> {
    let prompt = random_prompt(rng);
    let responses: Vec<TokenSeq> = (0..n).map(|_| random_response(rng)).collect();
    let old_logprobs = responses
        .iter()
        .map(|y| old.token_logprobs(&prompt, y))
        .collect::<Result<_>>()?;
    let mut rewards: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
    if rewards.iter().all(|&r| r == rewards[0]) {
        rewards[0] = 1.0 - rewards[0];
    }
    Ok(Group {
        prompt,
        responses,
        old_logprobs,
        rewards,
    })
}

fn grpo_eval(groups: Vec<Group>, clip: ClipRange, norm_len: usize) -> Result<LossFn> {
    let advs: Vec<Vec<f64>> = groups.iter().map(|g| group_advantages(&g.rewards)).collect::<Result<_>>()?;
    Ok(Box::new(move |m: &PolicyModel| {
        let items: Vec<PolicyItem> = groups
            .iter()
            .zip(&advs)
            .flat_map(|(g, a)| {
                (0..g.responses.len()).map(move |i| PolicyItem {
                    prompt: &g.prompt,
                    response: &g.responses[i],
                    old_logprobs: &g.old_logprobs[i],
                    advantage: a[i],
                })
            })
            .collect();
        Ok(grpo_loss_grad(m, &items, clip, norm_len)?.0)
    }))
}

struct DemoGroup {
    id: u64,
    prompt: TokenSeq,
    demo: TokenSeq,
    ref_demo: f64,
    rollouts: Vec<TokenSeq>,
    old_logprobs: Vec<Vec<f64>>,
    ref_rollouts: Vec<f64>,
    betas: Vec<f64>,
}

fn random_demo_groups(
    old: &PolicyModel,
    reference: &PolicyModel,
    prompts: usize,
    n: usize,
    betas: &BetaSchedule,
    rng: &mut Rng,
) -> Result<Vec<DemoGroup>> {
    let mut raw = Vec::new();
    let mut rewards = Vec::new();
    for _ in 0..prompts {
        let prompt = random_prompt(rng);
        let mut demo = random_response(rng);
        if !demo.terminated {
            let eos = VOCAB as u32 - 1;
            *demo.tokens.last_mut().unwrap() = eos;
            demo.terminated = true;
        }
        let rollouts: Vec<TokenSeq> = (0..n).map(|_| random_response(rng)).collect();
        rewards.push((0..n).map(|_| rng.gen_range(0..2) as f64).collect::<Vec<f64>>());
        raw.push((prompt, demo, rollouts));
    }
    // make sure every branch of the beta rule shows up across instances
    rewards[0] = vec![0.0; n];
    let masks = SolvabilityMasks::from_rewards(&rewards);
    raw.into_iter()
        .enumerate()
        .map(|(i, (prompt, demo, rollouts))| {
            let old_logprobs = rollouts.iter().map(|y| old.token_logprobs(&prompt, y)).collect::<Result<_>>()?;
            let ref_rollouts = rollouts
                .iter()
                .map(|y| reference.seq_logprob(&prompt, y))
                .collect::<Result<_>>()?;
            Ok(DemoGroup {
                id: i as u64,
                ref_demo: reference.seq_logprob(&prompt, &demo)?,
                betas: (0..n).map(|j| select_beta(&masks, i, j, betas)).collect(),
                prompt,
                demo,
                rollouts,
                old_logprobs,
                ref_rollouts,
            })
        })
        .collect()
}

fn dpo_pairs(groups: &[DemoGroup]) -> Vec<PairInput<'_>> {
    groups
        .iter()
        .flat_map(|g| {
            (0..g.rollouts.len()).map(move |j| PairInput {
                prompt: &g.prompt,
                chosen: &g.demo,
                rejected: &g.rollouts[j],
                ref_chosen: g.ref_demo,
                ref_rejected: g.ref_rollouts[j],
                beta: g.betas[j],
            })
        })
        .collect()
}

fn fest_pairs(groups: &[DemoGroup]) -> Vec<FestGrpoPair<'_>> {
    groups
        .iter()
        .flat_map(|g| {
            (0..g.rollouts.len()).map(move |j| FestGrpoPair {
                prompt_id: g.id,
                prompt: &g.prompt,
                chosen: &g.demo,
                rejected: &g.rollouts[j],
                rejected_old_logprobs: &g.old_logprobs[j],
                ref_chosen: g.ref_demo,
                ref_rejected: g.ref_rollouts[j],
                beta: g.betas[j],
            })
        })
        .collect()
}

/// Builds random instance `index` of `objective` on `kind`. Instances whose
/// importance ratios land within a small margin of a clip boundary are
/// redrawn.
pub fn build_instance(objective: Objective, kind: ModelKind, seed: u64, index: u64) -> Result<Instance> {
    let clip = ClipRange::default();
    let norm_len = MAX_LEN;
    for attempt in 0..1000u64 {
        let mut r = rng::substream(seed, &[rng::tag::CHECK, objective as u64, kind as u64, index, attempt]);
        let model = random_model(kind, &mut r);
        let mut old = model.clone();
        perturb(&mut old, 0.3, &mut r, true);
        let mut reference = model.clone();
        perturb(&mut reference, 0.5, &mut r, true);

        let eval: LossFn = match objective {
            Objective::Policy => {
                let x = random_prompt(&mut r);
                let y = random_response(&mut r);
                Box::new(move |m: &PolicyModel| {
                    Ok(LossGrad {
                        loss: m.seq_logprob(&x, &y)?,
                        grad: m.logprob_grad(&x, &y)?,
                    })
                })
            }
            Objective::Reinforce => {
                let x = random_prompt(&mut r);
                let y = random_response(&mut r);
                let reward = 1.0;
                Box::new(move |m: &PolicyModel| {
                    Ok(LossGrad {
                        loss: -reward * m.seq_logprob(&x, &y)?,
                        grad: reinforce_grad(m, &x, &y, reward)?,
                    })
                })
            }
            Objective::Entropy => {
                let pairs: Vec<(TokenSeq, TokenSeq)> =
                    (0..3).map(|_| (random_prompt(&mut r), random_response(&mut r))).collect();
                Box::new(move |m: &PolicyModel| {
                    let items: Vec<(&TokenSeq, &TokenSeq)> = pairs.iter().map(|(x, y)| (x, y)).collect();
                    entropy_loss_grad(m, &items, 0.7)
                })
            }
            Objective::Grpo => {
                let groups: Vec<Group> = (0..2).map(|_| random_group(&old, 4, &mut r)).collect::<Result<_>>()?;
                let mut kink = false;
                for g in &groups {
                    for y in &g.responses {
                        kink |= near_kink(&model, &old, &g.prompt, y, clip)?;
                    }
                }
                if kink {
                    continue;
                }
                grpo_eval(groups, clip, norm_len)?
            }
            Objective::Dpo => {
                let beta_scale = r.gen_range(0.05..2.0);
                let groups = random_demo_groups(&old, &reference, 2, 3, &BetaSchedule::uniform(beta_scale), &mut r)?;
                Box::new(move |m: &PolicyModel| Ok(dpo_loss_grad(m, &dpo_pairs(&groups))?.0))
            }
            Objective::FestDpo => {
                let groups = random_demo_groups(&old, &reference, 3, 4, &BetaSchedule::FEST_DPO, &mut r)?;
                let answer: Vec<Group> = (0..2).map(|_| random_group(&old, 4, &mut r)).collect::<Result<_>>()?;
                let mut kink = false;
                for g in &answer {
                    for y in &g.responses {
                        kink |= near_kink(&model, &old, &g.prompt, y, clip)?;
                    }
                }
                if kink {
                    continue;
                }
                let grpo = grpo_eval(answer, clip, norm_len)?;
                let coeff = 0.5;
                Box::new(move |m: &PolicyModel| {
                    let (le, _) = dpo_loss_grad(m, &dpo_pairs(&groups))?;
                    let li = grpo(m)?;
                    let items: Vec<(&TokenSeq, &TokenSeq)> =
                        groups.iter().flat_map(|g| g.rollouts.iter().map(move |y| (&g.prompt, y))).collect();
                    let ent = entropy_loss_grad(m, &items, 0.01)?;
                    Ok(combined_loss(coeff, &le, &li, &ent))
                })
            }
            Objective::FestGrpo => {
                let groups = random_demo_groups(&old, &reference, 3, 4, &BetaSchedule::FEST_GRPO, &mut r)?;
                let mut kink = false;
                for g in &groups {
                    for y in &g.rollouts {
                        kink |= near_kink(&model, &old, &g.prompt, y, clip)?;
                    }
                }
                if kink {
                    continue;
                }
                // weights are surrogate constants, frozen at the check point and
                // scaled so the gradient sits well above the round-off floor
                let weights: Vec<f64> = fest_grpo_weights(&model, &fest_pairs(&groups), FestGrpoOptions::FULL)?
                    .iter()
                    .map(|w| w.w * 40.0)
                    .collect();
                Box::new(move |m: &PolicyModel| {
                    fest_grpo_loss_grad(m, &fest_pairs(&groups), &weights, FestGrpoOptions::FULL, clip, norm_len)
                })
            }
        };
        return Ok(Instance { model, eval });
    }
    unreachable!("a kink-free instance is found long before 1000 attempts")
}

/// Clipped-surrogate instance whose groups all share one reward, so every
/// advantage is zero.
pub fn zero_advantage_instance(kind: ModelKind, seed: u64) -> Result<Instance> {
    let mut r = rng::substream(seed, &[rng::tag::CHECK, 0x2E50, kind as u64]);
    let model = random_model(kind, &mut r);
    let mut old = model.clone();
    perturb(&mut old, 0.3, &mut r, true);
    let mut groups: Vec<Group> = (0..2).map(|_| random_group(&old, 4, &mut r)).collect::<Result<_>>()?;
    for (i, g) in groups.iter_mut().enumerate() {
        g.rewards = vec![i as f64; g.rewards.len()];
    }
    let eval = grpo_eval(groups, ClipRange::default(), MAX_LEN)?;
    Ok(Instance { model, eval })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_passes_and_corruption_fails() {
        let f = |x: &[f64]| Some(x[0] * x[0] + 3.0 * x[0] * x[1] + x[1].powi(3));
        let x0 = [0.7, -1.2];
        let g = [2.0 * 0.7 + 3.0 * -1.2, 3.0 * 0.7 + 3.0 * 1.44];
        assert!(finite_difference_check(f, &x0, &g, FdSettings::default()).pass);
        let bad = [g[0], g[1] * 2.0];
        let rep = finite_difference_check(f, &x0, &bad, FdSettings::default());
        assert!(!rep.pass);
        assert_eq!(rep.worst_coord, Some(1));
    }

    #[test]
    fn nonfinite_loss_fails_with_location() {
        let f = |x: &[f64]| if x[1] > 0.5 { None } else { Some(x[0]) };
        let rep = finite_difference_check(f, &[0.0, 0.5], &[1.0, 0.0], FdSettings::default());
        assert!(!rep.pass);
        assert_eq!(rep.nonfinite_at, Some(1));
    }

    #[test]
    fn one_instance_per_objective_passes() {
        for o in Objective::ALL {
            for k in [ModelKind::Tabular, ModelKind::Recurrent] {
                let inst = build_instance(o, k, 0, 0).unwrap();
                let (_, rep) = inst.check(FdSettings::default()).unwrap();
                assert!(rep.pass, "{} {}: {rep:?}", o.name(), k.name());
                assert!(rep.checked > 0);
            }
        }
    }
}
