//! Implicit advantage under several betas: the fixed-gap scaling, the balance
//! point of the small-weight approximation, and a short live sweep.
//!
//! `cargo run --release --example implicit_advantage -- [steps]`

use festlab::diagnostics::zreport::{balance_point, beta_sweep, fixed_delta_reports};
use festlab::objectives::BetaSchedule;
use festlab::trainer::{TrainConfig, Variant};

fn main() -> festlab::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(40);
    let deltas: Vec<f64> = (0..50).map(|i| 5.0 + i as f64).collect();
    for r in fixed_delta_reports(&deltas, &[0.001, 0.01, 0.1], 10) {
        println!("{:<12} z mean {:>7.3}  w mean {:.3e}", r.label, r.z_mean, r.w_mean);
    }
    println!("balance point for a tenfold beta cut: z = {:.5}", balance_point(0.1)?);

    let mut cfg = TrainConfig::for_variant(Variant::FestDpo);
    cfg.steps = steps;
    let schedules = [BetaSchedule::uniform(0.1), BetaSchedule::FEST_DPO, BetaSchedule::uniform(0.001)];
    for e in beta_sweep(&cfg, &schedules, 12, None)? {
        let r = &e.report;
        println!(
            "{:<20} z [{:>8.3}, {:>8.3}] mean {:>7.3}  avg@8 {:.3}  histogram {:?}",
            r.label, r.z_min, r.z_max, r.z_mean, e.eval.avg_at_k, r.histogram.counts
        );
    }
    Ok(())
}
