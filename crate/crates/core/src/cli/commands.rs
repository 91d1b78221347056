use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, Context, Result};
use serde::Serialize;

use festlab::diagnostics::{beta_sweep, parse_beta_list, run_suite, Scope, SuiteSettings, SweepEntry};
use festlab::tasks::read_dataset;
use festlab::trainer::{
    ablation_matrix, decode_checkpoint, evaluate, files, run_training, EvalReport, TrainConfig, TrainOutcome, Variant,
};

use super::{Command, RunArgs, EXIT_CHECK, EXIT_OK};

pub const SEED_ENV: &str = "FESTLAB_SEED";

pub fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Train { run } => train(&run),
        Command::Eval {
            checkpoint,
            dataset,
            k,
            temperature,
            seed,
            out,
        } => eval(&checkpoint, &dataset, k, temperature, seed, out.as_deref()),
        Command::GradCheck {
            scope,
            seed,
            instances,
            out,
            force,
        } => grad_check(&scope, seed, instances, out.as_deref(), force),
        Command::BetaSweep { run, betas, bins } => sweep(&run, &betas, bins),
        Command::Ablation { run } => ablation(&run),
    }
}

/// Defaults, then the config file, then `FESTLAB_SEED`, then flags.
fn load_config(run: &RunArgs) -> Result<TrainConfig> {
    let variant = match &run.variant {
        Some(name) => Some(Variant::parse(name).ok_or_else(|| festlab::Error::Config {
            field: "variant".into(),
            message: format!("unknown variant {name:?}"),
        })?),
        None => None,
    };
    let text = match &run.config {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        None => "{}".into(),
    };
    let mut cfg = TrainConfig::from_json_with(&text, variant)?;
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s.trim().parse().map_err(|_| festlab::Error::Config {
            field: SEED_ENV.into(),
            message: format!("not an unsigned integer: {s:?}"),
        })?;
    }
    macro_rules! set {
        ($($field:ident),*) => {$(
            if let Some(v) = run.$field {
                cfg.$field = v;
            }
        )*};
    }
    set!(seed, steps, batch_prompts, minibatch, lr_start, lr_end, n_expert, n_answer_only, n_eval, eval_k, checkpoint_every);
    if let Some(c) = run.coeff {
        cfg.objective.coeff = c;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Creates `dir`, refusing a non-empty one unless `force`, which clears it.
fn prepare_out(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(festlab::Error::Config {
                field: "out".into(),
                message: format!("{} exists and is not empty; pass --force to replace it", dir.display()),
            }
            .into());
        }
        if occupied {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: u64,
    started_unix: u64,
    config: &'a TrainConfig,
    artifacts: Vec<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    finished_unix: u64,
    steps: usize,
    eval: &'a EvalReport,
    final_reward_e: f64,
    final_reward_i: f64,
    checkpoints: Vec<String>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_manifest(dir: &Path, command: &str, cfg: &TrainConfig) -> Result<()> {
    let mut artifacts: Vec<String> = [files::LOG, files::EVAL, files::D_EXPERT, files::D_ANSWER, files::D_EVAL, "summary.json"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    artifacts.push(files::checkpoint(cfg.steps));
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            tool: "festlab",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed: cfg.seed,
            started_unix: unix_now(),
            config: cfg,
            artifacts,
        },
    )
}

fn write_summary(dir: &Path, out: &TrainOutcome) -> Result<()> {
    let last = out.rows.last();
    write_json(
        &dir.join("summary.json"),
        &Summary {
            finished_unix: unix_now(),
            steps: out.rows.len(),
            eval: &out.eval,
            final_reward_e: last.map_or(0.0, |r| r.reward_e),
            final_reward_i: last.map_or(0.0, |r| r.reward_i),
            checkpoints: out
                .checkpoints
                .iter()
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect(),
        },
    )
}

fn train_into(dir: &Path, command: &str, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fs::create_dir_all(dir)?;
    write_manifest(dir, command, cfg)?;
    let out = run_training(cfg, Some(dir))?;
    write_summary(dir, &out)?;
    Ok(out)
}

fn report_eval(label: &str, e: &EvalReport) {
    println!(
        "{label}: avg@{k} {:.4}  pass@{k} {:.4}  std {:.4}",
        e.avg_at_k,
        e.pass_at_k,
        e.std,
        k = e.k
    );
}

fn train(run: &RunArgs) -> Result<i32> {
    let cfg = load_config(run)?;
    prepare_out(&run.out, run.force)?;
    let out = train_into(&run.out, "train", &cfg)?;
    report_eval(cfg.variant.name(), &out.eval);
    println!("wrote {}", run.out.display());
    Ok(EXIT_OK)
}

fn eval(checkpoint: &Path, dataset: &Path, k: usize, temperature: f64, seed: u64, out: Option<&Path>) -> Result<i32> {
    let text = fs::read_to_string(dataset).with_context(|| format!("reading {}", dataset.display()))?;
    let (task, records) = read_dataset(&text)?;
    let bytes = fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let (model, _, _) = decode_checkpoint(&bytes, &task.vocab())?;
    let prompts: Vec<_> = records.into_iter().map(|r| r.prompt).collect();
    let report = evaluate(&model, &task, &prompts, k, temperature, seed)?;
    report_eval("eval", &report);
    let json = serde_json::to_string_pretty(&report)?;
    println!("{json}");
    if let Some(p) = out {
        fs::write(p, json + "\n")?;
    }
    Ok(EXIT_OK)
}

fn grad_check(scope: &str, seed: u64, instances: usize, out: Option<&Path>, force: bool) -> Result<i32> {
    let scope = Scope::parse(scope)?;
    let settings = SuiteSettings {
        seed,
        instances,
        ..Default::default()
    };
    let report = run_suite(scope, settings)?;
    let text = report.to_text();
    print!("{text}");
    let mut path = None;
    if let Some(dir) = out {
        prepare_out(dir, force)?;
        write_json(&dir.join("grad_check.json"), &report)?;
        fs::write(dir.join("grad_check.txt"), &text)?;
        path = Some(dir.join("grad_check.json"));
    }
    if report.pass {
        Ok(EXIT_OK)
    } else {
        match path {
            Some(p) => eprintln!("grad-check failed; report at {}", p.display()),
            None => eprintln!("grad-check failed; rerun with --out DIR to keep the report"),
        }
        Ok(EXIT_CHECK)
    }
}

fn sweep(run: &RunArgs, betas: &str, bins: usize) -> Result<i32> {
    let mut cfg = load_config(run)?;
    if run.variant.is_none() && run.config.is_none() {
        cfg = cfg.with_variant(Variant::FestDpo);
    }
    let schedules = parse_beta_list(betas)?;
    prepare_out(&run.out, run.force)?;
    for (i, s) in schedules.iter().enumerate() {
        let mut c = cfg.clone();
        c.objective.betas = *s;
        let dir = run.out.join(format!("beta_{i}"));
        fs::create_dir_all(&dir)?;
        write_manifest(&dir, "beta-sweep", &c)?;
    }
    let entries = beta_sweep(&cfg, &schedules, bins, Some(&run.out))?;
    write_json(&run.out.join("zreports.json"), &entries)?;
    let csv = sweep_csv(&entries);
    fs::write(run.out.join("sweep.csv"), &csv)?;
    print!("{}", sweep_table(&entries));
    Ok(EXIT_OK)
}

fn sweep_csv(entries: &[SweepEntry]) -> String {
    let mut s = String::from("betas,avg@8,pass@8,final_reward_I,z_mean,z_min,z_max,w_mean,pairs,clamped\n");
    for e in entries {
        let r = &e.report;
        writeln!(
            s,
            "\"{}\",{},{},{},{},{},{},{},{},{}",
            r.label, e.eval.avg_at_k, e.eval.pass_at_k, e.final_reward_i, r.z_mean, r.z_min, r.z_max, r.w_mean, r.count, r.clamped
        )
        .unwrap();
    }
    s
}

fn sweep_table(entries: &[SweepEntry]) -> String {
    let w = entries.iter().map(|e| e.report.label.len()).max().unwrap_or(5).max(5);
    let mut s = format!(
        "{:<w$}  {:>7}  {:>7}  {:>9}  {:>9}  {:>9}  {:>10}\n",
        "betas", "avg@8", "pass@8", "z mean", "z min", "z max", "w mean"
    );
    for e in entries {
        let r = &e.report;
        writeln!(
            s,
            "{:<w$}  {:>7.4}  {:>7.4}  {:>9.3}  {:>9.3}  {:>9.3}  {:>10.3e}",
            r.label, e.eval.avg_at_k, e.eval.pass_at_k, r.z_mean, r.z_min, r.z_max, r.w_mean
        )
        .unwrap();
    }
    s
}

fn ablation(run: &RunArgs) -> Result<i32> {
    let base = load_config(run)?;
    prepare_out(&run.out, run.force)?;
    let mut csv = String::from("variant,avg@8,pass@8,final_reward_I\n");
    for cfg in ablation_matrix(&base) {
        let dir: PathBuf = run.out.join(cfg.variant.name());
        let out = train_into(&dir, "ablation", &cfg)?;
        report_eval(cfg.variant.name(), &out.eval);
        let last = out.rows.last().ok_or_else(|| anyhow!("run produced no rows"))?;
        writeln!(csv, "{},{},{},{}", cfg.variant.name(), out.eval.avg_at_k, out.eval.pass_at_k, last.reward_i)?;
    }
    fs::write(run.out.join("comparison.csv"), csv)?;
    println!("wrote {}", run.out.join("comparison.csv").display());
    Ok(EXIT_OK)
}
