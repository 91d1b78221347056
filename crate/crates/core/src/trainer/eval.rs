use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, SamplerConfig};
use crate::rng::{self, tag};
use crate::tasks::{PromptInstance, TaskSpec};

/// `k`-sample evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub prompts: usize,
    /// Mean over prompts of the mean reward over `k` rollouts.
    pub avg_at_k: f64,
    /// Fraction of prompts with at least one success.
    pub pass_at_k: f64,
    /// Standard deviation, across the `k` rollout indices, of the per-index
    /// mean accuracy.
    pub std: f64,
}

/// Samples `k` rollouts per prompt. Prompt `id` always uses the stream
/// `(seed, EVAL, id)`, so a prompt's rollouts do not depend on its position.
pub fn evaluate(
    model: &PolicyModel,
    task: &TaskSpec,
    prompts: &[PromptInstance],
    k: usize,
    temperature: f64,
    seed: u64,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::config("eval_k", "must be at least 1"));
    }
    if prompts.is_empty() {
        return Err(Error::config("eval", "no prompts"));
    }
    let cfg = SamplerConfig {
        temperature,
        max_len: model.max_len(),
        seed,
    };
    let mut per_index = vec![0.0; k];
    let mut avg = 0.0;
    let mut pass = 0usize;
    for p in prompts {
        let mut r = rng::substream(seed, &[tag::EVAL, p.id]);
        let mut hits = 0usize;
        for slot in per_index.iter_mut() {
            let s = model.sample(&p.tokens, &cfg, &mut r)?;
            let reward = task.verify(&p.tokens, &s.response);
            *slot += reward;
            hits += (reward > 0.0) as usize;
        }
        avg += hits as f64 / k as f64;
        pass += (hits > 0) as usize;
    }
    let n = prompts.len() as f64;
    let means: Vec<f64> = per_index.iter().map(|s| s / n).collect();
    let mu = means.iter().sum::<f64>() / k as f64;
    let var = means.iter().map(|m| (m - mu).powi(2)).sum::<f64>() / k as f64;
    Ok(EvalReport {
        k,
        prompts: prompts.len(),
        avg_at_k: avg / n,
        pass_at_k: pass as f64 / n,
        std: var.sqrt(),
    })
}
