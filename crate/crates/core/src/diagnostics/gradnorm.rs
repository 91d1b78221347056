//! Gradient norms of the sequence-level preference loss and the token-level
//! clipped surrogate on matched batches, bucketed by response length.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{dpo_loss_grad, group_advantages, grpo_loss_grad, ClipRange, PairInput, PolicyItem};
use crate::policy::{PolicyModel, TokenSeq};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradScanConfig {
    pub lengths: Vec<usize>,
    pub prompts: usize,
    pub group_size: usize,
    pub beta: f64,
    /// Fraction of each group that is rewarded.
    pub success_fraction: f64,
    pub seed: u64,
}

impl Default for GradScanConfig {
    fn default() -> Self {
        Self {
            lengths: vec![4, 8, 16, 24],
            prompts: 8,
            group_size: 4,
            beta: 0.1,
            success_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradBucket {
    pub len: usize,
    pub pairs: usize,
    pub rollouts: usize,
    pub dpo_norm: f64,
    pub grpo_norm: f64,
    /// `dpo_norm / max(grpo_norm, 1e-12)`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub buckets: Vec<GradBucket>,
}

impl GradReport {
    /// Preference-gradient norm strictly increases with length.
    pub fn dpo_grows(&self) -> bool {
        self.buckets.windows(2).all(|w| w[1].dpo_norm > w[0].dpo_norm)
    }

    /// No bucket's surrogate norm exceeds the shortest bucket's.
    pub fn grpo_does_not_grow(&self) -> bool {
        match self.buckets.first() {
            Some(first) => self.buckets.iter().all(|b| b.grpo_norm <= first.grpo_norm),
            None => true,
        }
    }
}

fn sequence(model: &PolicyModel, len: usize, terminated: bool, r: &mut Rng) -> Result<TokenSeq> {
    let eos = model.vocab().eos();
    let mut t: Vec<u32> = (0..len).map(|_| r.gen_range(0..eos)).collect();
    if terminated {
        *t.last_mut().expect("len >= 1") = eos;
    }
    model.vocab().seq(t)
}

/// For each length bucket draws the same number of prompts, one
/// demonstration per prompt and a group of rollouts, all of exactly that
/// length. The preference term pairs the demonstration with each failed
/// rollout; the surrogate uses every rollout at ratio one with `M` equal to
/// the bucket length.
pub fn grad_norm_scan(model: &PolicyModel, reference: &PolicyModel, cfg: &GradScanConfig) -> Result<GradReport> {
    if cfg.group_size < 2 || cfg.prompts == 0 {
        return Err(Error::config("grad_scan", "need at least one prompt and two rollouts"));
    }
    let winners = (cfg.success_fraction * cfg.group_size as f64).round() as usize;
    let mut buckets = Vec::new();
    for &len in &cfg.lengths {
        if len == 0 || len > model.max_len() {
            return Err(Error::Length {
                len,
                max: model.max_len(),
            });
        }
        let mut r = rng::substream(cfg.seed, &[rng::tag::CHECK, len as u64]);
        let mut prompts = Vec::new();
        let mut demos = Vec::new();
        let mut groups = Vec::new();
        for _ in 0..cfg.prompts {
            prompts.push(sequence(model, 3, false, &mut r)?);
            demos.push(sequence(model, len, true, &mut r)?);
            let g: Vec<TokenSeq> = (0..cfg.group_size)
                .map(|_| sequence(model, len, true, &mut r))
                .collect::<Result<_>>()?;
            groups.push(g);
        }
        let rewards: Vec<f64> = (0..cfg.group_size).map(|j| (j < winners) as u8 as f64).collect();
        let adv = group_advantages(&rewards)?;

        let mut pairs = Vec::new();
        let mut old = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            let ref_demo = reference.seq_logprob(&prompts[i], &demos[i])?;
            for (j, y) in g.iter().enumerate() {
                old.push(model.token_logprobs(&prompts[i], y)?);
                if rewards[j] == 0.0 {
                    pairs.push(PairInput {
                        prompt: &prompts[i],
                        chosen: &demos[i],
                        rejected: y,
                        ref_chosen: ref_demo,
                        ref_rejected: reference.seq_logprob(&prompts[i], y)?,
                        beta: cfg.beta,
                    });
                }
            }
        }
        let mut items = Vec::new();
        for (i, g) in groups.iter().enumerate() {
            for (j, y) in g.iter().enumerate() {
                items.push(PolicyItem {
                    prompt: &prompts[i],
                    response: y,
                    old_logprobs: &old[i * cfg.group_size + j],
                    advantage: adv[j],
                });
            }
        }
        let dpo_norm = dpo_loss_grad(model, &pairs)?.0.norm();
        let grpo_norm = grpo_loss_grad(model, &items, ClipRange::default(), len)?.0.norm();
        buckets.push(GradBucket {
            len,
            pairs: pairs.len(),
            rollouts: items.len(),
            dpo_norm,
            grpo_norm,
            ratio: dpo_norm / grpo_norm.max(1e-12),
        });
    }
    Ok(GradReport { buckets })
}
