//! Trains RL, RL-G, FEST-DPO and FEST-GRPO on the desk SUMMOD task over a
//! few seeds and prints held-out avg@8 / pass@8.
//!
//! `cargo run --release --example compare_variants -- [seeds] [steps]`

use std::time::Instant;

use festlab::trainer::{run_training, TrainConfig, Variant};

fn main() -> festlab::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(300);
    println!("{:<10} {:>8} {:>8} {:>10} {:>8}", "variant", "avg@8", "pass@8", "reward_I", "secs");
    for v in [Variant::Rl, Variant::RlG, Variant::FestDpo, Variant::FestGrpo] {
        let (mut avg, mut pass, mut ri) = (0.0, 0.0, 0.0);
        let t0 = Instant::now();
        for seed in 0..seeds {
            let mut cfg = TrainConfig::for_variant(v);
            cfg.seed = seed;
            cfg.steps = steps;
            let out = run_training(&cfg, None)?;
            avg += out.eval.avg_at_k;
            pass += out.eval.pass_at_k;
            ri += out.rows.last().map_or(0.0, |r| r.reward_i);
        }
        let n = seeds as f64;
        println!(
            "{:<10} {:>8.4} {:>8.4} {:>10.4} {:>8.1}",
            v.name(),
            avg / n,
            pass / n,
            ri / n,
            t0.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
