//! The six-way component ablation at matched seed and budget.
//!
//! `cargo run --release --example ablation -- [steps]`

use festlab::trainer::{ablation_matrix, run_training, TrainConfig};

fn main() -> festlab::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(150);
    let mut base = TrainConfig::default();
    base.steps = steps;
    println!("{:<16} {:>8} {:>8} {:>14}", "variant", "avg@8", "pass@8", "final reward_I");
    for cfg in ablation_matrix(&base) {
        let out = run_training(&cfg, None)?;
        let last = out.rows.last().map_or(0.0, |r| r.reward_i);
        println!(
            "{:<16} {:>8.4} {:>8.4} {:>14.4}",
            cfg.variant.name(),
            out.eval.avg_at_k,
            out.eval.pass_at_k,
            last
        );
    }
    Ok(())
}
