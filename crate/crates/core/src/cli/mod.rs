//! `festlab` command line.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 numeric abort.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "festlab", version, about = "Demonstration-guided RLVR objectives on tiny policies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one run and write its manifest, datasets, log and checkpoints.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset file whose prompts are evaluated; its header fixes the task.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 0.6)]
        temperature: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the gradient oracle suite.
    GradCheck {
        /// all, an objective name, or negative-control.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Finite-difference instances per objective and model kind.
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// One run per beta schedule, with implicit-advantage reports.
    BetaSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Schedules as "(unsolved,failed,correct);..." or bare numbers.
        #[arg(long)]
        betas: String,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// The six-way component ablation under matched seeds and budgets.
    Ablation {
        #[command(flatten)]
        run: RunArgs,
    },
}

/// Config file plus flag overrides shared by the training commands.
#[derive(Debug, Args)]
struct RunArgs {
    /// JSON config; missing keys take the variant defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Replace an existing output directory.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_prompts: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    lr_start: Option<f64>,
    #[arg(long)]
    lr_end: Option<f64>,
    #[arg(long)]
    n_expert: Option<usize>,
    #[arg(long)]
    n_answer_only: Option<usize>,
    #[arg(long)]
    n_eval: Option<usize>,
    #[arg(long)]
    eval_k: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Demonstration-loss weight.
    #[arg(long)]
    coeff: Option<f64>,
}

pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match commands::dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    match e.downcast_ref::<festlab::Error>() {
        Some(festlab::Error::Numeric(_)) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}
