//! The training loop.
//!
//! Each outer step follows the same order:
//!
//! 1. refresh the rollout snapshot `theta_old` from the live policy;
//! 2. draw `B` prompts from each dataset side (epoch-cycling, so a small
//!    demonstration set is covered once per epoch);
//! 3. sample `N` rollouts per prompt from the snapshot and verify them;
//! 4. compute group-relative advantages on the answer-only side and the
//!    solvability masks and per-rollout betas on the demonstration side;
//! 5. shuffle each side and cut `2BN / B_mini` minibatches holding
//!    `B_mini / 2` rollouts from each side;
//! 6. for each minibatch form `c * L_E + L_I + entropy`, skip it when the
//!    pre-clip gradient norm exceeds the discard threshold, otherwise clip
//!    and apply one AdamW update.

mod config;
mod eval;
mod log;
mod optim;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use config::{ablation_matrix, desk_task, TrainConfig, Variant, DESK_FEST_DPO_COEFF};
pub use eval::{evaluate, EvalReport};
pub use log::{to_csv, LogRow, LOG_HEADER};
pub use optim::{clip_global_norm, cosine_lr, AdamW};

use crate::error::{Error, Result};
use crate::objectives::{
    combined_loss, dpo_loss_grad, entropy_loss_grad, fest_grpo_loss_grad, fest_grpo_weights, group_advantages,
    grpo_loss_grad, select_beta, FestGrpoPair, LossGrad, PairInput, PairWeight, PolicyItem, SolvabilityMasks,
};
use crate::policy::checkpoint::{encode_model, read_model, Reader, ModelJson};
use crate::policy::{PolicyModel, SamplerConfig, TokenSeq, Vocab};
use crate::rng::{self, tag, Rng};
use crate::tasks::{gen_dataset, gen_prompts, write_dataset, DatasetSplit, PromptInstance};

/// Cycles through `0..n` in a fresh random order every epoch.
#[derive(Debug, Clone)]
pub struct EpochSampler {
    n: usize,
    seed: u64,
    tag: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl EpochSampler {
    pub fn new(n: usize, seed: u64, tag: u64) -> Self {
        Self {
            n,
            seed,
            tag,
            epoch: 0,
            order: Vec::new(),
            pos: 0,
        }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.n).collect();
            self.order.shuffle(&mut rng::substream(self.seed, &[self.tag, self.epoch]));
            self.epoch += 1;
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

/// A verified rollout with everything the objectives need.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Index of the prompt within this step's batch for its side.
    pub slot: usize,
    pub response: TokenSeq,
    pub old_logprobs: Vec<f64>,
    pub reward: f64,
    pub advantage: f64,
    /// Demonstration side only.
    pub beta: f64,
    pub ref_logprob: f64,
    pub frozen_weight: Option<PairWeight>,
}

#[derive(Debug, Clone)]
struct BatchPrompt {
    id: u64,
    tokens: TokenSeq,
    demo: Option<TokenSeq>,
    ref_demo: f64,
}

/// Instrumentation recorded by every step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Snapshot refreshes performed during this step.
    pub old_refreshes: usize,
    pub rollouts_e: usize,
    pub rollouts_i: usize,
    /// `(demonstration-side, answer-side)` rollout counts per minibatch.
    pub minibatch_sides: Vec<(usize, usize)>,
    /// How many minibatches consumed each rollout.
    pub consumed_e: Vec<usize>,
    pub consumed_i: Vec<usize>,
    pub pre_clip_norms: Vec<f64>,
    pub discarded: Vec<bool>,
    /// Parameters were bitwise identical across every discarded minibatch.
    pub discard_left_params_unchanged: bool,
    /// Pair weights used for the demonstration loss.
    pub pair_weights: Vec<PairWeight>,
}

/// Training state plus datasets.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    data: DatasetSplit,
    model: PolicyModel,
    reference: PolicyModel,
    old: PolicyModel,
    optimizer: AdamW,
    sampler_e: EpochSampler,
    sampler_i: EpochSampler,
    step: usize,
    old_refreshes: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let data = gen_dataset(&cfg.task, cfg.n_expert, cfg.n_answer_only, cfg.seed)?;
        let model = cfg.policy.build(cfg.task.vocab(), cfg.objective.norm_len, cfg.seed)?;
        Ok(Self::from_parts(cfg, data, model))
    }

    /// Starts from a given dataset and initial policy. The policy also
    /// becomes the fixed reference.
    pub fn from_parts(cfg: TrainConfig, data: DatasetSplit, model: PolicyModel) -> Self {
        let dim = model.dim();
        Self {
            sampler_e: EpochSampler::new(data.expert.len(), cfg.seed, tag::EPOCH_E),
            sampler_i: EpochSampler::new(data.answer_only.len(), cfg.seed, tag::EPOCH_I),
            optimizer: AdamW::new(dim, cfg.weight_decay),
            reference: model.snapshot(),
            old: model.snapshot(),
            model,
            data,
            cfg,
            step: 0,
            old_refreshes: 0,
        }
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn data(&self) -> &DatasetSplit {
        &self.data
    }

    pub fn model(&self) -> &PolicyModel {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut PolicyModel {
        &mut self.model
    }

    pub fn reference(&self) -> &PolicyModel {
        &self.reference
    }

    /// The snapshot used for the current (or last) step's rollouts.
    pub fn rollout_snapshot(&self) -> &PolicyModel {
        &self.old
    }

    pub fn optimizer(&self) -> &AdamW {
        &self.optimizer
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn old_refreshes(&self) -> usize {
        self.old_refreshes
    }

    /// Held-out prompts from the answer-only distribution, with ids after
    /// both training splits.
    pub fn eval_set(&self) -> Result<Vec<PromptInstance>> {
        let first = (self.cfg.n_expert + self.cfg.n_answer_only) as u64;
        gen_prompts(&self.cfg.task, self.cfg.n_eval, first, self.cfg.seed, tag::EVAL_SET)
    }

    pub fn evaluate(&self) -> Result<EvalReport> {
        evaluate(
            &self.model,
            &self.cfg.task,
            &self.eval_set()?,
            self.cfg.eval_k,
            self.cfg.eval_temperature,
            self.cfg.seed,
        )
    }

    fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            temperature: self.cfg.train_temperature,
            max_len: self.cfg.objective.norm_len,
            seed: self.cfg.seed,
        }
    }

    fn draw_prompts(&mut self, demo_side: bool) -> Result<Vec<BatchPrompt>> {
        let needs_ref = demo_side && self.needs_pairs();
        (0..self.cfg.batch_prompts)
            .map(|_| {
                let (id, tokens, demo) = if demo_side {
                    let d = &self.data.expert[self.sampler_e.next_index()];
                    (d.prompt.id, d.prompt.tokens.clone(), Some(d.response.clone()))
                } else {
                    let p = &self.data.answer_only[self.sampler_i.next_index()];
                    (p.id, p.tokens.clone(), None)
                };
                let ref_demo = match (&demo, needs_ref) {
                    (Some(d), true) => self.reference.seq_logprob(&tokens, d)?,
                    _ => 0.0,
                };
                Ok(BatchPrompt {
                    id,
                    tokens,
                    demo,
                    ref_demo,
                })
            })
            .collect()
    }

    fn needs_pairs(&self) -> bool {
        matches!(self.cfg.variant, Variant::FestDpo) || self.cfg.variant.toggles().is_some()
    }

    fn sample_side(&self, prompts: &[BatchPrompt], side_tag: u64) -> Result<Vec<Rollout>> {
        let scfg = self.sampler_config();
        let n = self.cfg.rollouts();
        let mut out = Vec::with_capacity(prompts.len() * n);
        for (slot, p) in prompts.iter().enumerate() {
            let mut r: Rng = rng::substream(self.cfg.seed, &[side_tag, self.step as u64, slot as u64]);
            for _ in 0..n {
                let s = self.old.sample(&p.tokens, &scfg, &mut r)?;
                let reward = self.cfg.task.verify(&p.tokens, &s.response);
                out.push(Rollout {
                    slot,
                    response: s.response,
                    old_logprobs: s.logprobs,
                    reward,
                    advantage: 0.0,
                    beta: 0.0,
                    ref_logprob: 0.0,
                    frozen_weight: None,
                });
            }
        }
        Ok(out)
    }

    fn group_rewards(rollouts: &[Rollout], groups: usize) -> Vec<Vec<f64>> {
        let mut g = vec![Vec::new(); groups];
        for r in rollouts {
            g[r.slot].push(r.reward);
        }
        g
    }

    fn fill_advantages(rollouts: &mut [Rollout], groups: usize) -> Result<()> {
        let rewards = Self::group_rewards(rollouts, groups);
        let adv: Vec<Vec<f64>> = rewards.iter().map(|g| group_advantages(g)).collect::<Result<_>>()?;
        let mut seen = vec![0usize; groups];
        for r in rollouts.iter_mut() {
            r.advantage = adv[r.slot][seen[r.slot]];
            seen[r.slot] += 1;
        }
        Ok(())
    }

    fn check_discard(&self, at_discard: &mut Option<(Vec<f64>, u64)>, trace: &mut StepTrace) {
        if let Some((params, step)) = at_discard.take() {
            trace.discard_left_params_unchanged &=
                params.as_slice() == self.model.params() && step == self.optimizer.step;
        }
    }

    /// One outer step.
    pub fn step(&mut self) -> Result<(LogRow, StepTrace)> {
        let started = Instant::now();
        let cfg = self.cfg.clone();
        let mut trace = StepTrace {
            discard_left_params_unchanged: true,
            ..StepTrace::default()
        };

        self.old = self.model.snapshot();
        self.old_refreshes += 1;
        trace.old_refreshes = 1;

        let prompts_e = self.draw_prompts(true)?;
        let prompts_i = self.draw_prompts(false)?;
        let mut roll_e = self.sample_side(&prompts_e, tag::ROLLOUT_E)?;
        let mut roll_i = self.sample_side(&prompts_i, tag::ROLLOUT_I)?;
        trace.rollouts_e = roll_e.len();
        trace.rollouts_i = roll_i.len();

        Self::fill_advantages(&mut roll_i, prompts_i.len())?;
        Self::fill_advantages(&mut roll_e, prompts_e.len())?;
        let masks = SolvabilityMasks::from_rewards(&Self::group_rewards(&roll_e, prompts_e.len()));
        let mut seen = vec![0usize; prompts_e.len()];
        for r in roll_e.iter_mut() {
            r.beta = select_beta(&masks, r.slot, seen[r.slot], &cfg.objective.betas);
            seen[r.slot] += 1;
        }
        if self.needs_pairs() {
            for r in roll_e.iter_mut() {
                r.ref_logprob = self.reference.seq_logprob(&prompts_e[r.slot].tokens, &r.response)?;
            }
            if let (Some(opts), false) = (cfg.variant.toggles(), cfg.objective.live_weights) {
                let pairs = fest_pairs(&prompts_e, &roll_e, &(0..roll_e.len()).collect::<Vec<_>>());
                let w = fest_grpo_weights(&self.old, &pairs, opts)?;
                for (r, pw) in roll_e.iter_mut().zip(w) {
                    r.frozen_weight = Some(pw);
                }
            }
        }

        let reward_e = mean(roll_e.iter().map(|r| r.reward));
        let reward_i = mean(roll_i.iter().map(|r| r.reward));

        let mut order_e: Vec<usize> = (0..roll_e.len()).collect();
        let mut order_i: Vec<usize> = (0..roll_i.len()).collect();
        order_e.shuffle(&mut rng::substream(cfg.seed, &[tag::SHUFFLE, self.step as u64, 0]));
        order_i.shuffle(&mut rng::substream(cfg.seed, &[tag::SHUFFLE, self.step as u64, 1]));
        trace.consumed_e = vec![0; roll_e.len()];
        trace.consumed_i = vec![0; roll_i.len()];

        let lr = cosine_lr(self.step, cfg.steps, cfg.lr_start, cfg.lr_end);
        let half = cfg.minibatch / 2;
        let k = cfg.minibatches_per_step();
        let (mut loss_e, mut loss_i, mut gn_e, mut gn_i, mut gn_t) = (0.0, 0.0, 0.0, 0.0, 0.0);
        // parameters and optimizer step at the most recent discard
        let mut at_discard: Option<(Vec<f64>, u64)> = None;
        for b in 0..k {
            self.check_discard(&mut at_discard, &mut trace);
            let idx_e = &order_e[b * half..(b + 1) * half];
            let idx_i = &order_i[b * half..(b + 1) * half];
            trace.minibatch_sides.push((idx_e.len(), idx_i.len()));
            idx_e.iter().for_each(|&i| trace.consumed_e[i] += 1);
            idx_i.iter().for_each(|&i| trace.consumed_i[i] += 1);

            let items_i: Vec<PolicyItem> = idx_i
                .iter()
                .map(|&i| {
                    let r = &roll_i[i];
                    PolicyItem {
                        prompt: &prompts_i[r.slot].tokens,
                        response: &r.response,
                        old_logprobs: &r.old_logprobs,
                        advantage: r.advantage,
                    }
                })
                .collect();
            let (li, _) = grpo_loss_grad(&self.model, &items_i, cfg.objective.clip, cfg.objective.norm_len)?;
            let le = self.demo_loss(&prompts_e, &roll_e, idx_e, &mut trace.pair_weights)?;

            let mut ent_items: Vec<(&TokenSeq, &TokenSeq)> = items_i.iter().map(|it| (it.prompt, it.response)).collect();
            if cfg.variant.uses_demo_side() {
                ent_items.extend(idx_e.iter().map(|&i| (&prompts_e[roll_e[i].slot].tokens, &roll_e[i].response)));
            }
            let ent = entropy_loss_grad(&self.model, &ent_items, cfg.objective.entropy_coeff)?;

            let mut total = combined_loss(cfg.objective.coeff, &le, &li, &ent);
            if !total.loss.is_finite() || total.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("combined loss at step {} minibatch {b}", self.step)));
            }
            loss_e += le.loss;
            loss_i += li.loss;
            gn_e += le.norm();
            gn_i += li.norm();
            let norm = crate::math::l2_norm(&total.grad);
            gn_t += norm;
            trace.pre_clip_norms.push(norm);
            if norm > cfg.max_grad_norm_discard {
                trace.discarded.push(true);
                at_discard = Some((self.model.params().to_vec(), self.optimizer.step));
                continue;
            }
            trace.discarded.push(false);
            clip_global_norm(&mut total.grad, cfg.grad_clip);
            self.optimizer.update(self.model.params_mut(), &total.grad, lr)?;
            if self.model.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("parameters after step {}", self.step)));
            }
        }
        self.check_discard(&mut at_discard, &mut trace);
        let kf = k as f64;
        let zs: Vec<f64> = trace.pair_weights.iter().map(|w| w.z).collect();
        let row = LogRow {
            step: self.step,
            reward_e,
            reward_i,
            loss_e: loss_e / kf,
            loss_i: loss_i / kf,
            gnorm_e: gn_e / kf,
            gnorm_i: gn_i / kf,
            gnorm_total: gn_t / kf,
            z_mean: if zs.is_empty() { 0.0 } else { mean(zs.iter().copied()) },
            z_min: zs.iter().copied().fold(None, |a: Option<f64>, z| Some(a.map_or(z, |a| a.min(z)))).unwrap_or(0.0),
            z_max: zs.iter().copied().fold(None, |a: Option<f64>, z| Some(a.map_or(z, |a| a.max(z)))).unwrap_or(0.0),
            clamp_count: trace.pair_weights.iter().filter(|w| w.clamped).count(),
            lr,
            discarded: trace.discarded.iter().filter(|d| **d).count(),
            wall_ms: if cfg.log_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        self.step += 1;
        Ok((row, trace))
    }

    /// Demonstration-side loss for one minibatch (unscaled by `c`).
    fn demo_loss(
        &self,
        prompts: &[BatchPrompt],
        rollouts: &[Rollout],
        idx: &[usize],
        weights_out: &mut Vec<PairWeight>,
    ) -> Result<LossGrad> {
        let cfg = &self.cfg;
        match cfg.variant {
            Variant::Rl => Ok(LossGrad::zero(self.model.dim())),
            Variant::RlG => {
                let items: Vec<PolicyItem> = idx
                    .iter()
                    .map(|&i| {
                        let r = &rollouts[i];
                        PolicyItem {
                            prompt: &prompts[r.slot].tokens,
                            response: &r.response,
                            old_logprobs: &r.old_logprobs,
                            advantage: r.advantage,
                        }
                    })
                    .collect();
                Ok(grpo_loss_grad(&self.model, &items, cfg.objective.clip, cfg.objective.norm_len)?.0)
            }
            Variant::FestDpo => {
                let pairs: Vec<PairInput> = idx
                    .iter()
                    .map(|&i| {
                        let r = &rollouts[i];
                        let p = &prompts[r.slot];
                        PairInput {
                            prompt: &p.tokens,
                            chosen: p.demo.as_ref().expect("demonstration side"),
                            rejected: &r.response,
                            ref_chosen: p.ref_demo,
                            ref_rejected: r.ref_logprob,
                            beta: r.beta,
                        }
                    })
                    .collect();
                let (lg, w) = dpo_loss_grad(&self.model, &pairs)?;
                weights_out.extend(w);
                Ok(lg)
            }
            v => {
                let opts = v.toggles().expect("surrogate variants carry toggles");
                let pairs = fest_pairs(prompts, rollouts, idx);
                let pw = if cfg.objective.live_weights {
                    fest_grpo_weights(&self.model, &pairs, opts)?
                } else {
                    idx.iter().map(|&i| rollouts[i].frozen_weight.expect("frozen at rollout time")).collect()
                };
                let w: Vec<f64> = pw.iter().map(|p| p.w).collect();
                weights_out.extend(pw);
                fest_grpo_loss_grad(&self.model, &pairs, &w, opts, cfg.objective.clip, cfg.objective.norm_len)
            }
        }
    }

    /// Policy checkpoint followed by the optimizer section.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        encode_checkpoint(&self.model, &self.optimizer, self.cfg.seed, self.step as u64)
    }
}

fn fest_pairs<'a>(prompts: &'a [BatchPrompt], rollouts: &'a [Rollout], idx: &[usize]) -> Vec<FestGrpoPair<'a>> {
    idx.iter()
        .map(|&i| {
            let r = &rollouts[i];
            let p = &prompts[r.slot];
            FestGrpoPair {
                prompt_id: p.id,
                prompt: &p.tokens,
                chosen: p.demo.as_ref().expect("demonstration side"),
                rejected: &r.response,
                rejected_old_logprobs: &r.old_logprobs,
                ref_chosen: p.ref_demo,
                ref_rejected: r.ref_logprob,
                beta: r.beta,
            }
        })
        .collect()
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

const OPT_MAGIC: &[u8; 8] = b"OPTADAMW";

/// Checkpoint layout: the policy record, then `OPTADAMW`, step (u64), dim
/// (u64), beta1, beta2, eps, weight decay (f64 each), first moments, second
/// moments. All little-endian.
pub fn encode_checkpoint(model: &PolicyModel, opt: &AdamW, seed: u64, step: u64) -> Vec<u8> {
    let mut out = encode_model(model, seed, step);
    out.extend_from_slice(OPT_MAGIC);
    out.extend_from_slice(&opt.step.to_le_bytes());
    out.extend_from_slice(&(opt.m.len() as u64).to_le_bytes());
    for x in [opt.beta1, opt.beta2, opt.eps, opt.weight_decay].iter().chain(&opt.m).chain(&opt.v) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Reads a checkpoint written by [`encode_checkpoint`]. A bare policy
/// record without the optimizer section is also accepted.
pub fn decode_checkpoint(bytes: &[u8], vocab: &Vocab) -> Result<(PolicyModel, Option<AdamW>, u64)> {
    let (header, model, end) = read_model(bytes, vocab)?;
    if end == bytes.len() {
        return Ok((model, None, header.step));
    }
    let mut r = Reader { bytes, pos: end };
    if r.take(8)? != OPT_MAGIC {
        return Err(Error::Checkpoint("bad optimizer section magic".into()));
    }
    let step = r.u64()?;
    let n = r.u64()? as usize;
    if n != model.dim() {
        return Err(Error::Checkpoint(format!("optimizer has {n} moments for {} params", model.dim())));
    }
    let (beta1, beta2, eps, weight_decay) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    let opt = AdamW {
        beta1,
        beta2,
        eps,
        weight_decay,
        step,
        m,
        v,
    };
    Ok((model, Some(opt), header.step))
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub rows: Vec<LogRow>,
    pub eval: EvalReport,
    pub model: PolicyModel,
    pub checkpoints: Vec<PathBuf>,
}

/// Artifact names inside a run directory.
pub mod files {
    pub const LOG: &str = "log.csv";
    pub const EVAL: &str = "eval.json";
    pub const D_EXPERT: &str = "d_expert.tsv";
    pub const D_ANSWER: &str = "d_answer.tsv";
    pub const D_EVAL: &str = "d_eval.tsv";

    pub fn checkpoint(step: usize) -> String {
        format!("ckpt_{step:06}.bin")
    }
}

/// Runs `cfg.steps` outer steps. With `out`, writes the datasets, the CSV
/// log (flushed after every row), checkpoints at the configured cadence
/// plus the final one, and the held-out evaluation. On a numeric failure the
/// policy as of the start of the failing step is saved as
/// `ckpt_last_good.bin` before the error is returned.
pub fn run_training(cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome> {
    run_training_with(cfg, out, |_, _| {})
}

/// [`run_training`] with a callback that sees every step's row and trace.
pub fn run_training_with<F>(cfg: &TrainConfig, out: Option<&Path>, mut observe: F) -> Result<TrainOutcome>
where
    F: FnMut(&LogRow, &StepTrace),
{
    let mut trainer = Trainer::new(cfg.clone())?;
    let eval_set = trainer.eval_set()?;
    let mut log = None;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(files::D_EXPERT), write_dataset(&cfg.task, &trainer.data().expert_records())?)?;
        fs::write(dir.join(files::D_ANSWER), write_dataset(&cfg.task, &trainer.data().answer_only_records())?)?;
        let eval_records: Vec<_> = eval_set
            .iter()
            .map(|p| crate::tasks::Record {
                prompt: p.clone(),
                demo: None,
            })
            .collect();
        fs::write(dir.join(files::D_EVAL), write_dataset(&cfg.task, &eval_records)?)?;
        let mut f = fs::File::create(dir.join(files::LOG))?;
        writeln!(f, "{LOG_HEADER}")?;
        log = Some(f);
    }
    let mut rows = Vec::with_capacity(cfg.steps);
    let mut checkpoints = Vec::new();
    for _ in 0..cfg.steps {
        let row = match trainer.step() {
            Ok((row, trace)) => {
                observe(&row, &trace);
                row
            }
            Err(e @ Error::Numeric(_)) => {
                if let Some(dir) = out {
                    let good = encode_model(trainer.rollout_snapshot(), cfg.seed, trainer.steps_done() as u64);
                    fs::write(dir.join("ckpt_last_good.bin"), good)?;
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", row.csv_line())?;
            f.flush()?;
        }
        rows.push(row);
        let done = trainer.steps_done();
        let due = cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0;
        if let Some(dir) = out {
            if due || done == cfg.steps {
                let path = dir.join(files::checkpoint(done));
                fs::write(&path, trainer.checkpoint_bytes())?;
                let json = ModelJson::of(trainer.model(), cfg.seed, done as u64);
                fs::write(path.with_extension("json"), serde_json::to_string(&json)?)?;
                checkpoints.push(path);
            }
        }
    }
    let eval = evaluate(
        trainer.model(),
        &cfg.task,
        &eval_set,
        cfg.eval_k,
        cfg.eval_temperature,
        cfg.seed,
    )?;
    if let Some(dir) = out {
        fs::write(dir.join(files::EVAL), serde_json::to_string_pretty(&eval)?)?;
    }
    Ok(TrainOutcome {
        rows,
        eval,
        model: trainer.model().clone(),
        checkpoints,
    })
}
