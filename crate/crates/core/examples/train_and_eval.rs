//! Trains one FEST-GRPO run into a temporary directory, then reloads the
//! final checkpoint and the held-out dataset and evaluates them.
//!
//! `cargo run --release --example train_and_eval -- [steps]`

use festlab::tasks::read_dataset;
use festlab::trainer::{decode_checkpoint, evaluate, files, run_training, TrainConfig, Variant};

fn main() -> festlab::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let mut cfg = TrainConfig::for_variant(Variant::FestGrpo);
    cfg.steps = steps;
    cfg.checkpoint_every = steps / 4;
    let dir = std::env::temp_dir().join(format!("festlab-example-{}", std::process::id()));
    let out = run_training(&cfg, Some(&dir))?;
    for row in out.rows.iter().step_by((steps / 10).max(1)) {
        println!(
            "step {:>4}  reward_E {:.3}  reward_I {:.3}  |g| {:.3}  lr {:.4}",
            row.step, row.reward_e, row.reward_i, row.gnorm_total, row.lr
        );
    }
    println!("in-run eval: avg@8 {:.3} pass@8 {:.3}", out.eval.avg_at_k, out.eval.pass_at_k);

    let (task, records) = read_dataset(&std::fs::read_to_string(dir.join(files::D_EVAL))?)?;
    let last = out.checkpoints.last().expect("final checkpoint");
    let (model, opt, step) = decode_checkpoint(&std::fs::read(last)?, &task.vocab())?;
    let prompts: Vec<_> = records.into_iter().map(|r| r.prompt).collect();
    let again = evaluate(&model, &task, &prompts, 8, cfg.eval_temperature, cfg.seed)?;
    println!(
        "reloaded step {step} (optimizer step {}): avg@8 {:.3} pass@8 {:.3}",
        opt.map_or(0, |o| o.step),
        again.avg_at_k,
        again.pass_at_k
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
