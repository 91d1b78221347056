//! Implicit-advantage statistics per beta, sweeps over beta schedules and the
//! balance point of the small-weight approximation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::{pair_weight, BetaSchedule, PairWeight};
use crate::trainer::{run_training_with, EvalReport, LogRow, TrainConfig, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lo, hi]`; values outside land in the end bins.
    pub fn new(values: &[f64], lo: f64, hi: f64, bins: usize) -> Self {
        let mut counts = vec![0; bins.max(1)];
        let width = (hi - lo) / counts.len() as f64;
        for &v in values {
            let i = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            let i = (i.max(0.0) as usize).min(counts.len() - 1);
            counts[i] += 1;
        }
        Self { lo, hi, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZReport {
    pub label: String,
    pub count: usize,
    pub z_mean: f64,
    pub z_min: f64,
    pub z_max: f64,
    pub w_mean: f64,
    pub clamped: usize,
    pub histogram: Histogram,
}

impl ZReport {
    /// Summary of `weights`, histogrammed over `range` (their own span when
    /// `None`).
    pub fn from_weights(label: impl Into<String>, weights: &[PairWeight], range: Option<(f64, f64)>, bins: usize) -> Self {
        let zs: Vec<f64> = weights.iter().map(|w| w.z).collect();
        let n = zs.len().max(1) as f64;
        let z_min = zs.iter().copied().fold(f64::INFINITY, f64::min);
        let z_max = zs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (z_min, z_max) = if zs.is_empty() { (0.0, 0.0) } else { (z_min, z_max) };
        let (lo, hi) = range.unwrap_or((z_min, z_max));
        Self {
            label: label.into(),
            count: zs.len(),
            z_mean: zs.iter().sum::<f64>() / n,
            z_min,
            z_max,
            w_mean: weights.iter().map(|w| w.w).sum::<f64>() / n,
            clamped: weights.iter().filter(|w| w.clamped).count(),
            histogram: Histogram::new(&zs, lo, hi, bins),
        }
    }

    pub fn spread(&self) -> f64 {
        self.z_max - self.z_min
    }
}

/// Largest `|w - beta / (1 + e^z)|` over logged weights.
pub fn max_weight_mismatch(weights: &[PairWeight]) -> f64 {
    weights
        .iter()
        .map(|w| (w.w - w.beta / (1.0 + w.z.exp())).abs())
        .fold(0.0, f64::max)
}

/// Recomputes pair weights for a fixed sample of log-ratio gaps under each
/// beta.
pub fn fixed_delta_reports(deltas: &[f64], betas: &[f64], bins: usize) -> Vec<ZReport> {
    let all: Vec<Vec<PairWeight>> = betas
        .iter()
        .map(|&b| deltas.iter().map(|&d| pair_weight(d, 0.0, b)).collect())
        .collect();
    let range = shared_range(&all);
    betas
        .iter()
        .zip(&all)
        .map(|(b, ws)| ZReport::from_weights(format!("beta={b}"), ws, range, bins))
        .collect()
}

/// Common z span so histograms share their axis.
pub fn shared_range(sets: &[Vec<PairWeight>]) -> Option<(f64, f64)> {
    let zs = sets.iter().flatten().map(|w| w.z);
    let lo = zs.clone().fold(f64::INFINITY, f64::min);
    let hi = zs.fold(f64::NEG_INFINITY, f64::max);
    (lo <= hi).then_some((lo, hi))
}

/// For a gap with `z = beta * delta` large, the pair weight is about
/// `beta e^{-z}`. Scaling beta by `ratio` scales it by `ratio e^{(1 - ratio) z}`;
/// this returns the `z` where that factor is one, found by bisection.
pub fn balance_point(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("ratio", "must lie in (0, 1)"));
    }
    let f = |z: f64| ratio.ln() + (1.0 - ratio) * z;
    let (mut lo, mut hi) = (0.0, 1.0);
    while f(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Parses `"(a,b,c);(d,e,f)"`; a bare number is a uniform schedule.
pub fn parse_beta_list(text: &str) -> Result<Vec<BetaSchedule>> {
    let bad = |m: &str| Error::config("betas", m.to_string());
    let mut out = Vec::new();
    for entry in text.split(';').map(str::trim).filter(|e| !e.is_empty()) {
        let inner = entry.trim_start_matches('(').trim_end_matches(')');
        let vals: Vec<f64> = inner
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad(&format!("cannot parse {v:?}"))))
            .collect::<Result<_>>()?;
        let s = match vals.as_slice() {
            [b] => BetaSchedule::uniform(*b),
            [a, b, c] => BetaSchedule {
                unsolved: *a,
                failed: *b,
                correct: *c,
            },
            _ => return Err(bad("each entry needs one or three values")),
        };
        s.validate()?;
        out.push(s);
    }
    if out.is_empty() {
        return Err(bad("empty list"));
    }
    Ok(out)
}

/// One live run of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub betas: BetaSchedule,
    pub report: ZReport,
    pub eval: EvalReport,
    pub final_reward_i: f64,
}

pub fn schedule_label(b: &BetaSchedule) -> String {
    format!("({},{},{})", b.unsolved, b.failed, b.correct)
}

/// Trains one run per schedule from the same base config, which differs
/// between entries only in its betas, and summarizes every pair weight the
/// runs used. With `out`, run `i` writes into `out/beta_{i}`.
pub fn beta_sweep(base: &TrainConfig, schedules: &[BetaSchedule], bins: usize, out: Option<&Path>) -> Result<Vec<SweepEntry>> {
    if !matches!(base.variant, Variant::FestDpo | Variant::FestGrpo | Variant::RlGDecaying) {
        return Err(Error::config("variant", "beta sweep needs a variant with pair weights"));
    }
    let mut runs = Vec::new();
    for (i, s) in schedules.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.objective.betas = *s;
        let mut weights = Vec::new();
        let dir = out.map(|o| o.join(format!("beta_{i}")));
        let outcome = run_training_with(&cfg, dir.as_deref(), |_: &LogRow, t| weights.extend_from_slice(&t.pair_weights))?;
        let final_reward_i = outcome.rows.last().map_or(0.0, |r| r.reward_i);
        runs.push((weights, outcome.eval, final_reward_i));
    }
    let sets: Vec<Vec<PairWeight>> = runs.iter().map(|r| r.0.clone()).collect();
    let range = shared_range(&sets);
    Ok(schedules
        .iter()
        .zip(runs)
        .map(|(s, (w, eval, final_reward_i))| SweepEntry {
            betas: *s,
            report: ZReport::from_weights(schedule_label(s), &w, range, bins),
            eval,
            final_reward_i,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balance_point_for_tenfold_reduction() {
        let z = balance_point(0.1).unwrap();
        assert!((z - 10f64.ln() / 0.9).abs() < 1e-12);
        assert!((z - 2.5584).abs() < 1e-3);
        // the weight ratio crosses one there
        let approx = |beta: f64, delta: f64| beta * (-(beta * delta)).exp();
        let delta = z;
        assert!((approx(0.1, delta) / approx(1.0, delta) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fixed_gaps_scale_mean_z_linearly() {
        let deltas = [0.5, 3.0, -2.0, 40.0, 7.25];
        let reps = fixed_delta_reports(&deltas, &[0.01, 0.1], 10);
        assert!((reps[1].z_mean / reps[0].z_mean - 10.0).abs() < 1e-12);
        assert!(reps[0].spread() < reps[1].spread());
        assert_eq!(reps[0].histogram.counts.iter().sum::<usize>(), deltas.len());
    }

    #[test]
    fn weights_match_closed_form() {
        let ws: Vec<PairWeight> = [-80.0, -3.0, 0.0, 1.5, 600.0]
            .iter()
            .map(|&d| pair_weight(d, 0.0, 0.1))
            .collect();
        assert!(max_weight_mismatch(&ws) < 1e-12);
        for w in &ws {
            assert!(w.w > 0.0 && w.w < w.beta);
        }
    }

    #[test]
    fn parses_schedule_lists() {
        let s = parse_beta_list("(0.1,0.1,0.1);(0.1,0.01,0.01);(0.001,0.001,0.001)").unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s[1], BetaSchedule::FEST_DPO);
        assert_eq!(parse_beta_list("0.05").unwrap(), vec![BetaSchedule::uniform(0.05)]);
        assert!(parse_beta_list("(0.1,0.2)").is_err());
        assert!(parse_beta_list("(0.1,-1,0.1)").is_err());
        assert!(parse_beta_list("").is_err());
    }
}
