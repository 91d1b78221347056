//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs under `cargo test` (no libtest harness).

use std::time::{Duration, Instant};

use festlab::diagnostics::decomposition::{decomposition_check, DECOMPOSITION_TOL};
use festlab::diagnostics::enumerate::{
    enumeration_oracle, max_z_score, reinforce_monte_carlo, worst_excess, DEFAULT_LIMIT,
};
use festlab::diagnostics::fd::{perturb, Objective};
use festlab::diagnostics::zreport::{balance_point, beta_sweep, max_weight_mismatch};
use festlab::diagnostics::{run_suite, Scope, SuiteSettings};
use festlab::objectives::{
    grpo_loss_grad, select_beta, select_beta_masked, BetaSchedule, ClipRange, ObjectiveConfig, PairWeight, PolicyItem,
    SolvabilityMasks,
};
use festlab::policy::{PolicySpec, TokenSeq, Vocab};
use festlab::rng;
use festlab::trainer::{run_training, run_training_with, TrainConfig, Trainer, Variant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// 1. Finite differences for every objective, at least 50 instances over both
/// model kinds, under two minutes.
fn gradient_oracles() -> Outcome {
    let t0 = Instant::now();
    let rep = run_suite(Scope::All, SuiteSettings::default()).expect("suite runs");
    let elapsed = t0.elapsed();
    let core = [Objective::Grpo, Objective::Dpo, Objective::FestDpo, Objective::FestGrpo, Objective::Reinforce];
    let fd: Vec<_> = rep.cases.iter().filter(|c| c.id.starts_with("fd/")).collect();
    let core_cases = fd
        .iter()
        .filter(|c| core.iter().any(|o| c.id.split('/').nth(1) == Some(o.name())))
        .count();
    let both_kinds = fd.iter().any(|c| c.id.contains("/tabular/")) && fd.iter().any(|c| c.id.contains("/recurrent/"));
    let failed: Vec<&str> = rep.cases.iter().filter(|c| !c.pass).map(|c| c.id.as_str()).collect();
    outcome(
        rep.pass && core_cases >= 50 && both_kinds && elapsed < Duration::from_secs(120),
        format!(
            "{} cases ({} finite-difference on the five objectives), failed {:?}, {:.1}s",
            rep.cases.len(),
            core_cases,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

/// 2. Preference gradient equals weighted likelihood plus negative-reward
/// policy gradient.
fn decomposition() -> Outcome {
    let rep = decomposition_check(11, 100).expect("check runs");
    outcome(
        rep.trials == 100 && rep.max_deviation < DECOMPOSITION_TOL,
        format!("max deviation {:.2e} over {} pairs", rep.max_deviation, rep.trials),
    )
}

/// 3. Score identity and Monte-Carlo REINFORCE against exact enumeration.
fn score_and_policy_gradient() -> Outcome {
    let mut worst_score: f64 = 0.0;
    let mut worst_mc = f64::NEG_INFINITY;
    let mut worst_z: f64 = 0.0;
    let mut cases = 0;
    for (vocab, max_len) in [(3usize, 3usize), (4, 2), (4, 3)] {
        for seed in 0..2u64 {
            let v = Vocab::anonymous(vocab).unwrap();
            let mut m = PolicySpec::TabularNgram {
                window: 1,
                prompt_buckets: 1,
            }
            .build(v.clone(), max_len, 0)
            .unwrap();
            perturb(&mut m, 1.0, &mut rng::substream(seed, &[vocab as u64, max_len as u64]), false);
            let x = v.seq(vec![0]).unwrap();
            // rewarded when the response ends and its first token is 1
            let reward = |y: &TokenSeq| (y.terminated && y.tokens.first() == Some(&1)) as u8 as f64;
            let o = enumeration_oracle(&m, &x, reward, max_len, DEFAULT_LIMIT).unwrap();
            worst_score = o.score_mean.iter().fold(worst_score, |a, g| a.max(g.abs()));
            worst_score = worst_score.max((o.total_prob - 1.0).abs());
            let mc = reinforce_monte_carlo(&m, &x, reward, max_len, 100_000, seed).unwrap();
            let target: Vec<f64> = o.reward_grad.iter().map(|g| -g).collect();
            worst_mc = worst_mc.max(worst_excess(&mc, &target));
            worst_z = worst_z.max(max_z_score(&mc, &target));
            cases += 1;
        }
    }
    outcome(
        worst_score < 1e-9 && worst_mc <= 1e-12,
        format!(
            "{cases} instances: max |E[grad log pi]| {worst_score:.1e}, largest |MC - exact| {worst_z:.2} SE"
        ),
    )
}

/// 4. Exhaustive beta rule over every reward pattern of groups up to four.
fn beta_truth_table() -> Outcome {
    let betas = BetaSchedule {
        unsolved: 1.0,
        failed: 2.0,
        correct: 3.0,
    };
    let mut checked = 0;
    let mut ok = true;
    for n in 1..=4usize {
        for pattern in 0..(1u32 << n) {
            let rewards: Vec<f64> = (0..n).map(|j| ((pattern >> j) & 1) as f64).collect();
            let masks = SolvabilityMasks::from_rewards(&[rewards.clone()]);
            let any = rewards.iter().any(|&r| r > 0.0);
            for j in 0..n {
                let expect = if rewards[j] > 0.0 {
                    3.0
                } else if any {
                    2.0
                } else {
                    1.0
                };
                ok &= select_beta(&masks, 0, j, &betas) == expect;
                ok &= select_beta_masked(&masks, 0, j, &betas) == expect;
                checked += 1;
            }
        }
    }
    let defaults = BetaSchedule::FEST_DPO.as_array() == [0.1, 0.01, 0.01]
        && BetaSchedule::FEST_GRPO.as_array() == [0.005, 0.01, 0.05]
        && TrainConfig::for_variant(Variant::FestDpo).objective.betas == BetaSchedule::FEST_DPO
        && TrainConfig::for_variant(Variant::FestGrpo).objective.betas == BetaSchedule::FEST_GRPO
        && ObjectiveConfig::default().clip == ClipRange { low: 0.2, high: 0.3 };
    outcome(
        ok && defaults,
        format!("{checked} (pattern, rollout) cells, defaults match: {defaults}"),
    )
}

/// 5. Positive advantage above `1 + high` contributes no gradient; negative
/// advantage at the same ratio does. Mirror image below `1 - low`.
fn clipping() -> Outcome {
    let v = Vocab::anonymous(4).unwrap();
    let mut m = PolicySpec::default().build(v.clone(), 4, 0).unwrap();
    perturb(&mut m, 1.0, &mut rng::substream(5, &[]), false);
    let x = v.seq(vec![0, 1]).unwrap();
    let y = v.seq(vec![2, 0, 3]).unwrap();
    let lp = m.token_logprobs(&x, &y).unwrap();
    let norm_at = |ratio: f64, adv: f64| {
        let old: Vec<f64> = lp.iter().map(|l| l - ratio.ln()).collect();
        let item = PolicyItem {
            prompt: &x,
            response: &y,
            old_logprobs: &old,
            advantage: adv,
        };
        let (lg, stats) = grpo_loss_grad(&m, &[item], ClipRange::default(), 4).unwrap();
        (lg.norm(), stats.clipped)
    };
    let (hi_pos, c1) = norm_at(1.4, 1.0);
    let (hi_neg, c2) = norm_at(1.4, -1.0);
    let (lo_neg, c3) = norm_at(0.7, -1.0);
    let (lo_pos, c4) = norm_at(0.7, 1.0);
    let (inside, c5) = norm_at(1.25, 1.0);
    let pass = hi_pos == 0.0
        && hi_neg > 0.0
        && lo_neg == 0.0
        && lo_pos > 0.0
        && inside > 0.0
        && (c1, c2, c3, c4, c5) == (3, 0, 3, 0, 0);
    outcome(
        pass,
        format!(
            "ratio 1.4: |g| A>0 {hi_pos:.1e}, A<0 {hi_neg:.2e}; ratio 0.7: A<0 {lo_neg:.1e}, A>0 {lo_pos:.2e}; ratio 1.25 A>0 {inside:.2e}"
        ),
    )
}

fn desk(variant: Variant, seed: u64, steps: usize) -> TrainConfig {
    let mut c = TrainConfig::for_variant(variant);
    c.seed = seed;
    c.steps = steps;
    c
}

/// 6. Weight closed form, balance point, and tighter z spread for smaller
/// beta on live runs.
fn implicit_advantage() -> Outcome {
    let cfg = desk(Variant::FestDpo, 0, 40);
    let mut logged: Vec<PairWeight> = Vec::new();
    run_training_with(&cfg, None, |_, t| logged.extend_from_slice(&t.pair_weights)).unwrap();
    let mismatch = max_weight_mismatch(&logged);
    let in_range = logged.iter().all(|w| w.w > 0.0 && w.w < w.beta);
    let z = balance_point(0.1).unwrap();

    let schedules: Vec<BetaSchedule> = [0.1, 0.01, 0.001].map(BetaSchedule::uniform).to_vec();
    let sweep = beta_sweep(&cfg, &schedules, 20, None).unwrap();
    let spreads: Vec<f64> = sweep.iter().map(|e| e.report.spread()).collect();
    let tighter = spreads.windows(2).all(|w| w[1] < w[0]);
    outcome(
        mismatch < 1e-12 && in_range && (z - 2.5584).abs() < 1e-3 && tighter,
        format!(
            "{} logged weights, max mismatch {mismatch:.1e}; balance z {z:.5}; spread for beta 0.1/0.01/0.001: {:.3}/{:.4}/{:.5}",
            logged.len(),
            spreads[0],
            spreads[1],
            spreads[2]
        ),
    )
}

/// 7. Five seeds at 300 steps on the desk task.
fn directional() -> Outcome {
    let t0 = Instant::now();
    let variants = [Variant::Rl, Variant::RlG, Variant::FestDpo, Variant::FestGrpo];
    let seeds = 5;
    let mut avg = [0.0; 4];
    let mut pass = [0.0; 4];
    for (k, v) in variants.iter().enumerate() {
        for seed in 0..seeds {
            let cfg = desk(*v, seed, 300);
            assert_eq!(cfg.n_expert, 16);
            let out = run_training(&cfg, None).unwrap();
            avg[k] += out.eval.avg_at_k / seeds as f64;
            pass[k] += out.eval.pass_at_k / seeds as f64;
        }
    }
    let elapsed = t0.elapsed();
    let ok = avg[2] >= avg[0] + 0.05
        && avg[3] >= avg[0] + 0.05
        && pass[2] >= pass[1]
        && pass[3] >= pass[1]
        && elapsed < Duration::from_secs(30 * 60);
    outcome(
        ok,
        format!(
            "avg@8 RL {:.3} RL-G {:.3} FEST-DPO {:.3} FEST-GRPO {:.3}; pass@8 RL-G {:.3} FEST-DPO {:.3} FEST-GRPO {:.3}; {:.0}s",
            avg[0],
            avg[1],
            avg[2],
            avg[3],
            pass[1],
            pass[2],
            pass[3],
            elapsed.as_secs_f64()
        ),
    )
}

/// 8. Loop instrumentation on the desk configuration.
fn loop_conformance() -> Outcome {
    let mut ok = true;
    let mut steps = 0;
    for v in Variant::ALL {
        let cfg = desk(v, 1, 3);
        let mut t = Trainer::new(cfg.clone()).unwrap();
        for s in 0..cfg.steps {
            let (_, trace) = t.step().unwrap();
            ok &= trace.old_refreshes == 1 && t.old_refreshes() == s + 1;
            ok &= trace.minibatch_sides.len() == cfg.minibatches_per_step();
            ok &= trace.minibatch_sides.iter().all(|&(e, i)| e == cfg.minibatch / 2 && i == cfg.minibatch / 2);
            ok &= trace.consumed_e.iter().chain(&trace.consumed_i).all(|&c| c == 1);
            steps += 1;
        }
    }
    // threshold between observed norms
    let mut cfg = desk(Variant::FestGrpo, 2, 1);
    cfg.max_grad_norm_discard = f64::MAX;
    let (_, probe) = Trainer::new(cfg.clone()).unwrap().step().unwrap();
    let mut norms = probe.pre_clip_norms.clone();
    norms.sort_by(f64::total_cmp);
    cfg.max_grad_norm_discard = norms[norms.len() / 2];
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let (row, trace) = t.step().unwrap();
    let mut discard_ok = trace
        .pre_clip_norms
        .iter()
        .zip(&trace.discarded)
        .all(|(n, d)| *d == (*n > cfg.max_grad_norm_discard));
    discard_ok &= trace.discard_left_params_unchanged && row.discarded > 0;
    discard_ok &= t.optimizer().step == trace.discarded.iter().filter(|d| !**d).count() as u64;
    // threshold below every norm: nothing moves
    cfg.max_grad_norm_discard = f64::MIN_POSITIVE;
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let before = t.model().params().to_vec();
    let (row, _) = t.step().unwrap();
    discard_ok &= row.discarded == cfg.minibatches_per_step() && before == t.model().params();
    outcome(
        ok && discard_ok,
        format!(
            "{steps} steps over {} variants; {} of {} minibatches discarded at the median norm",
            Variant::ALL.len(),
            trace.discarded.iter().filter(|d| **d).count(),
            trace.discarded.len()
        ),
    )
}

/// 9. Byte-identical CSV logs from the binary.
fn determinism() -> Outcome {
    use std::process::Command;
    let d = tempfile::tempdir().unwrap();
    let cfg = r#"{"variant":"FEST-GRPO","steps":6,"batch_prompts":4,"minibatch":16,"n_answer_only":32,"n_eval":16,"objective":{"group_size":4}}"#;
    std::fs::write(d.path().join("c.json"), cfg).unwrap();
    let run = |args: &[&str]| {
        Command::new(env!("CARGO_BIN_EXE_festlab"))
            .args(args)
            .current_dir(d.path())
            .env_remove("FESTLAB_SEED")
            .output()
            .unwrap()
            .status
            .success()
    };
    let mut ok = true;
    let mut compared = Vec::new();
    for tag in ["a", "b"] {
        ok &= run(&["train", "--config", "c.json", "--out", &format!("train_{tag}")]);
        ok &= run(&["ablation", "--config", "c.json", "--steps", "2", "--out", &format!("abl_{tag}")]);
        ok &= run(&["beta-sweep", "--config", "c.json", "--steps", "2", "--betas", "0.1;0.01", "--out", &format!("sweep_{tag}")]);
    }
    let files = [
        "train_{}/log.csv",
        "abl_{}/comparison.csv",
        "abl_{}/RL/log.csv",
        "abl_{}/FEST-GRPO/log.csv",
        "sweep_{}/sweep.csv",
        "sweep_{}/beta_0/log.csv",
    ];
    for f in files {
        let a = std::fs::read(d.path().join(f.replace("{}", "a"))).unwrap_or_default();
        let b = std::fs::read(d.path().join(f.replace("{}", "b"))).unwrap_or_default();
        ok &= !a.is_empty() && a == b;
        compared.push(f.replace("_{}", ""));
    }
    outcome(ok, format!("identical: {}", compared.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient oracle suite", gradient_oracles),
        ("decomposition identity", decomposition),
        ("score-function and policy-gradient oracles", score_and_policy_gradient),
        ("adaptive beta truth table", beta_truth_table),
        ("clipping semantics", clipping),
        ("implicit advantage analysis", implicit_advantage),
        ("desk-scale directional claim", directional),
        ("training loop conformance", loop_conformance),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("FESTLAB_ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if only.is_some_and(|k| k != i + 1) {
            continue;
        }
        let t0 = Instant::now();
        let o = check();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("[{status}] {}. {name}: {} ({:.1}s)", i + 1, o.detail, t0.elapsed().as_secs_f64());
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
