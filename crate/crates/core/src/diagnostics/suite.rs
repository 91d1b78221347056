//! The gradient-check suite: finite differences for every objective on both
//! model kinds plus the exact oracles, with JSON and aligned-text reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicySpec, Vocab};
use crate::rng;

use super::decomposition::decomposition_check;
use super::enumerate::{enumeration_oracle, max_z_score, reinforce_monte_carlo, worst_excess, DEFAULT_LIMIT};
use super::fd::{
    build_instance, finite_difference_check, perturb, random_prompt, zero_advantage_instance, FdSettings, ModelKind,
    Objective,
};

/// What to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    All,
    Only(Objective),
    /// A deliberately corrupted gradient; the suite must report it failed.
    NegativeControl,
}

impl Scope {
    pub fn parse(name: &str) -> Result<Scope> {
        match name {
            "all" => Ok(Scope::All),
            "negative-control" => Ok(Scope::NegativeControl),
            _ => Objective::ALL
                .iter()
                .find(|o| o.name() == name)
                .map(|o| Scope::Only(*o))
                .ok_or_else(|| Error::config("scope", format!("unknown scope {name:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Only(o) => o.name(),
            Scope::NegativeControl => "negative-control",
        }
    }

    fn includes(&self, o: Objective) -> bool {
        match self {
            Scope::All => true,
            Scope::Only(x) => *x == o,
            Scope::NegativeControl => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub pass: bool,
    /// Worst error for the case, in the unit named by `detail`.
    pub metric: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub scope: String,
    pub seed: u64,
    pub cases: Vec<CaseResult>,
    pub passed: usize,
    pub failed: usize,
    pub pass: bool,
}

impl SuiteReport {
    fn new(scope: Scope, seed: u64, cases: Vec<CaseResult>) -> Self {
        let passed = cases.iter().filter(|c| c.pass).count();
        Self {
            scope: scope.name().into(),
            seed,
            failed: cases.len() - passed,
            pass: passed == cases.len() && !cases.is_empty(),
            passed,
            cases,
        }
    }

    pub fn to_text(&self) -> String {
        let w = self.cases.iter().map(|c| c.id.len()).max().unwrap_or(2).max(4);
        let mut s = String::new();
        writeln!(s, "{:<w$}  {:<4}  {:>11}  detail", "case", "ok", "metric").unwrap();
        for c in &self.cases {
            let ok = if c.pass { "pass" } else { "FAIL" };
            writeln!(s, "{:<w$}  {:<4}  {:>11.3e}  {}", c.id, ok, c.metric, c.detail).unwrap();
        }
        writeln!(
            s,
            "scope {}: {} passed, {} failed",
            self.scope, self.passed, self.failed
        )
        .unwrap();
        s
    }
}

/// Suite knobs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteSettings {
    pub seed: u64,
    /// Finite-difference instances per objective and model kind.
    pub instances: usize,
    pub fd: FdSettings,
    pub mc_samples: usize,
    pub decomposition_trials: usize,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 5,
            fd: FdSettings::default(),
            mc_samples: 100_000,
            decomposition_trials: 100,
        }
    }
}

fn fd_case(id: String, rep: &super::fd::FdReport) -> CaseResult {
    let detail = match rep.nonfinite_at {
        Some(c) => format!("non-finite loss perturbing coordinate {c}"),
        None => format!(
            "rel err over {} coords, worst at {}",
            rep.checked,
            rep.worst_coord.map_or("-".into(), |c| c.to_string())
        ),
    };
    CaseResult {
        id,
        pass: rep.pass,
        metric: rep.worst_rel_err,
        detail,
    }
}

/// Exact oracle on an enumerable tabular instance: `|V| = 4`, length 3,
/// reward 1 when the emitted digits sum to 0 mod 3 and the response ended.
fn enumerable_instance(seed: u64) -> Result<(crate::policy::PolicyModel, crate::policy::TokenSeq)> {
    let mut r = rng::substream(seed, &[rng::tag::CHECK, 0xE4]);
    let spec = PolicySpec::TabularNgram {
        window: 1,
        prompt_buckets: 1,
    };
    let mut m = spec.build(Vocab::anonymous(4)?, 3, 0)?;
    perturb(&mut m, 1.0, &mut r, false);
    Ok((m, random_prompt(&mut r)))
}

fn digit_sum_reward(y: &crate::policy::TokenSeq) -> f64 {
    let body = if y.terminated { &y.tokens[..y.len() - 1] } else { return 0.0 };
    (body.iter().sum::<u32>() % 3 == 0 && !body.is_empty()) as u8 as f64
}

pub fn run_suite(scope: Scope, s: SuiteSettings) -> Result<SuiteReport> {
    let kinds = [ModelKind::Tabular, ModelKind::Recurrent];
    let mut cases = Vec::new();

    if scope == Scope::NegativeControl {
        let inst = build_instance(Objective::Grpo, ModelKind::Tabular, s.seed, 0)?;
        let mut lg = (inst.eval)(&inst.model)?;
        let i = lg
            .grad
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        lg.grad[i] *= 2.0;
        let rep = finite_difference_check(|p| inst.loss_at(p), inst.model.params(), &lg.grad, s.fd);
        cases.push(fd_case("negative-control/grpo/tabular/doubled".into(), &rep));
        return Ok(SuiteReport::new(scope, s.seed, cases));
    }

    for o in Objective::ALL {
        if !scope.includes(o) {
            continue;
        }
        for k in kinds {
            for i in 0..s.instances {
                let inst = build_instance(o, k, s.seed, i as u64)?;
                let (_, rep) = inst.check(s.fd)?;
                cases.push(fd_case(format!("fd/{}/{}/{i}", o.name(), k.name()), &rep));
            }
        }
    }

    if scope.includes(Objective::Grpo) {
        for k in kinds {
            let inst = zero_advantage_instance(k, s.seed)?;
            let (lg, rep) = inst.check(s.fd)?;
            let analytic = lg.grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let numeric = {
                let x0 = inst.model.params().to_vec();
                let mut worst = 0.0f64;
                let mut x = x0.clone();
                for j in 0..x0.len() {
                    x[j] = x0[j] + s.fd.step;
                    let up = inst.loss_at(&x);
                    x[j] = x0[j] - s.fd.step;
                    let down = inst.loss_at(&x);
                    x[j] = x0[j];
                    let d = match (up, down) {
                        (Some(u), Some(d)) => (u - d) / (2.0 * s.fd.step),
                        _ => f64::INFINITY,
                    };
                    worst = worst.max(d.abs());
                }
                worst
            };
            cases.push(CaseResult {
                id: format!("zero-advantage/grpo/{}", k.name()),
                pass: rep.pass && analytic < 1e-9 && numeric < 1e-9,
                metric: analytic.max(numeric),
                detail: "max |grad| analytic and numeric".into(),
            });
        }
    }

    if scope.includes(Objective::Dpo) {
        let rep = decomposition_check(s.seed, s.decomposition_trials)?;
        cases.push(CaseResult {
            id: "decomposition/dpo/tabular".into(),
            pass: rep.pass,
            metric: rep.max_deviation,
            detail: format!("max abs deviation over {} pairs", rep.trials),
        });
    }

    if scope.includes(Objective::Policy) || scope.includes(Objective::Reinforce) {
        let (m, x) = enumerable_instance(s.seed)?;
        let oracle = enumeration_oracle(&m, &x, digit_sum_reward, 3, DEFAULT_LIMIT)?;
        if scope.includes(Objective::Policy) {
            let worst = oracle.score_mean.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let mass = (oracle.total_prob - 1.0).abs();
            cases.push(CaseResult {
                id: "score-identity/policy/tabular".into(),
                pass: worst < 1e-9 && mass < 1e-12,
                metric: worst,
                detail: format!("max |E[grad log pi]| over {} sequences", oracle.support),
            });
        }
        if scope.includes(Objective::Reinforce) {
            let mc = reinforce_monte_carlo(&m, &x, digit_sum_reward, 3, s.mc_samples, s.seed)?;
            let target: Vec<f64> = oracle.reward_grad.iter().map(|g| -g).collect();
            let excess = worst_excess(&mc, &target);
            cases.push(CaseResult {
                id: "monte-carlo/reinforce/tabular".into(),
                pass: excess <= 1e-12,
                metric: max_z_score(&mc, &target),
                detail: format!("max |mean - exact| / SE over {} samples, limit 3", mc.samples),
            });
        }
    }
    Ok(SuiteReport::new(scope, s.seed, cases))
}
