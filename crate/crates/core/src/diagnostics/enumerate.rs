//! Exact expectations by enumerating every response a sampler can emit.
//!
//! The support at length limit `L` is every EOS-terminated sequence of
//! length `1..=L` plus every EOS-free sequence of length exactly `L`
//! (truncated). Its probabilities sum to one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyModel, SamplerConfig, TokenSeq, Vocab};
use crate::rng;

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_LIMIT: u128 = 200_000;

/// Number of sequences in the support.
pub fn response_count(vocab_size: usize, max_len: usize) -> u128 {
    let body = vocab_size as u128 - 1;
    let terminated: u128 = (0..max_len as u32).map(|l| body.pow(l)).sum();
    terminated + body.pow(max_len as u32)
}

pub fn enumerate_responses(vocab: &Vocab, max_len: usize, limit: u128) -> Result<Vec<TokenSeq>> {
    let count = response_count(vocab.size(), max_len);
    if count > limit {
        return Err(Error::TooLarge { count, limit });
    }
    let eos = vocab.eos();
    let mut out = Vec::with_capacity(count as usize);
    let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
    for len in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            let mut t = prefix.clone();
            t.push(eos);
            out.push(vocab.seq(t)?);
            for tok in 0..eos {
                let mut t = prefix.clone();
                t.push(tok);
                next.push(t);
            }
        }
        frontier = next;
        if len + 1 == max_len {
            for t in &frontier {
                out.push(vocab.seq(t.clone())?);
            }
        }
    }
    Ok(out)
}

/// Exact quantities for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    pub support: usize,
    pub total_prob: f64,
    pub expected_reward: f64,
    /// `grad E[r] = sum_y pi(y) r(y) grad log pi(y)`.
    pub reward_grad: Vec<f64>,
    /// `sum_y pi(y) grad log pi(y)`, zero for a normalized policy.
    pub score_mean: Vec<f64>,
}

pub fn enumeration_oracle<R>(
    model: &PolicyModel,
    prompt: &TokenSeq,
    reward: R,
    max_len: usize,
    limit: u128,
) -> Result<Oracle>
where
    R: Fn(&TokenSeq) -> f64,
{
    let support = enumerate_responses(model.vocab(), max_len, limit)?;
    let dim = model.dim();
    let mut o = Oracle {
        support: support.len(),
        total_prob: 0.0,
        expected_reward: 0.0,
        reward_grad: vec![0.0; dim],
        score_mean: vec![0.0; dim],
    };
    for y in &support {
        let trace = model.forward(prompt, y)?;
        let p = trace.seq_logprob(y).exp();
        let r = reward(y);
        o.total_prob += p;
        o.expected_reward += p * r;
        let ones = vec![p; y.len()];
        model.backward(&trace, &trace.score_dlogits(y, &ones), &mut o.score_mean);
        if r != 0.0 {
            let w = vec![p * r; y.len()];
            model.backward(&trace, &trace.score_dlogits(y, &w), &mut o.reward_grad);
        }
    }
    Ok(o)
}

/// Monte-Carlo REINFORCE estimate `mean_s(-r_s grad log pi(y_s))` with
/// per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub samples: usize,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

pub fn reinforce_monte_carlo<R>(
    model: &PolicyModel,
    prompt: &TokenSeq,
    reward: R,
    max_len: usize,
    samples: usize,
    seed: u64,
) -> Result<McEstimate>
where
    R: Fn(&TokenSeq) -> f64,
{
    let dim = model.dim();
    let cfg = SamplerConfig {
        temperature: 1.0,
        max_len,
        seed,
    };
    let mut r = rng::substream(seed, &[rng::tag::CHECK]);
    let mut sum = vec![0.0; dim];
    let mut sq = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for _ in 0..samples {
        let s = model.sample(prompt, &cfg, &mut r)?;
        let rew = reward(&s.response);
        if rew == 0.0 {
            continue;
        }
        g.iter_mut().for_each(|x| *x = 0.0);
        let w = vec![-rew; s.response.len()];
        model.accumulate_score(prompt, &s.response, &w, &mut g)?;
        for i in 0..dim {
            sum[i] += g[i];
            sq[i] += g[i] * g[i];
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    Ok(McEstimate { samples, mean, stderr })
}

/// Largest `|estimate - target| - 3 SE` over coordinates; the estimate
/// agrees when this is at most `1e-12`.
pub fn worst_excess(est: &McEstimate, target: &[f64]) -> f64 {
    est.mean
        .iter()
        .zip(&est.stderr)
        .zip(target)
        .map(|((m, se), t)| (m - t).abs() - 3.0 * se)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `|estimate - target| / SE` over coordinates with a nonzero
/// standard error.
pub fn max_z_score(est: &McEstimate, target: &[f64]) -> f64 {
    est.mean
        .iter()
        .zip(&est.stderr)
        .zip(target)
        .filter(|((_, se), _)| **se > 0.0)
        .map(|((m, se), t)| (m - t).abs() / se)
        .fold(0.0, f64::max)
}
