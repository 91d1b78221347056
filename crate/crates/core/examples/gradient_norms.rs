//! Gradient norms of the sequence-level preference loss against the
//! token-level clipped surrogate, bucketed by response length.
//!
//! `cargo run --release --example gradient_norms`

use festlab::diagnostics::{grad_norm_scan, GradScanConfig};
use festlab::policy::{PolicySpec, Vocab};
use festlab::rng;

fn main() -> festlab::Result<()> {
    let mut model = PolicySpec::default().build(Vocab::anonymous(12)?, 24, 0)?;
    let mut r = rng::substream(0, &[]);
    for p in model.params_mut() {
        *p = rand::Rng::gen_range(&mut r, -0.5..0.5);
    }
    let report = grad_norm_scan(&model, &model, &GradScanConfig::default())?;
    println!("{:>4} {:>12} {:>12} {:>10}", "len", "|g_pref|", "|g_group|", "ratio");
    for b in &report.buckets {
        println!("{:>4} {:>12.4e} {:>12.4e} {:>10.2}", b.len, b.dpo_norm, b.grpo_norm, b.ratio);
    }
    println!(
        "preference norm grows: {}, surrogate norm does not: {}",
        report.dpo_grows(),
        report.grpo_does_not_grow()
    );
    Ok(())
}
