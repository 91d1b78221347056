//! Per-token behavior of the asymmetric clipped surrogate across importance
//! ratios for positive and negative advantages.
//!
//! `cargo run --example clipping`

use festlab::objectives::{grpo_loss_grad, ClipRange, PolicyItem};
use festlab::policy::{PolicySpec, Vocab};

fn main() -> festlab::Result<()> {
    let vocab = Vocab::anonymous(3)?;
    let model = PolicySpec::default().build(vocab.clone(), 2, 0)?;
    let x = vocab.parse("t0")?;
    let y = vocab.parse("t1")?;
    let lp = model.token_logprobs(&x, &y)?;
    let clip = ClipRange::default();
    println!("clip range ({}, {})", 1.0 - clip.low, 1.0 + clip.high);
    println!("{:>6} {:>12} {:>12}", "ratio", "|g| A=+1", "|g| A=-1");
    for ratio in [0.6, 0.75, 0.85, 1.0, 1.2, 1.35, 1.6] {
        let old = [lp[0] - f64::ln(ratio)];
        let norm = |advantage: f64| -> festlab::Result<f64> {
            let item = PolicyItem {
                prompt: &x,
                response: &y,
                old_logprobs: &old,
                advantage,
            };
            Ok(grpo_loss_grad(&model, &[item], clip, 1)?.0.norm())
        };
        println!("{ratio:>6} {:>12.4} {:>12.4}", norm(1.0)?, norm(-1.0)?);
    }
    Ok(())
}
