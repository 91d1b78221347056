//! The preference-loss gradient split into a weighted likelihood term on the
//! demonstration and a negative-reward term on the rollout.
//!
//! `cargo run --example decomposition`

use festlab::diagnostics::decomposition::{decomposition_check, decomposed_grad};
use festlab::objectives::{dpo_loss_grad, PairInput};
use festlab::policy::{PolicySpec, Vocab};
use festlab::rng;

fn main() -> festlab::Result<()> {
    let vocab = Vocab::anonymous(4)?;
    let mut model = PolicySpec::default().build(vocab.clone(), 5, 0)?;
    let mut r = rng::substream(3, &[]);
    for p in model.params_mut() {
        *p = rand::Rng::gen_range(&mut r, -1.0..1.0);
    }
    let x = vocab.parse("t0 t1")?;
    let chosen = vocab.parse("t2 t2 <eos>")?;
    let rejected = vocab.parse("t0 <eos>")?;
    for beta in [0.001, 0.01, 0.1, 1.0] {
        let pair = PairInput {
            prompt: &x,
            chosen: &chosen,
            rejected: &rejected,
            ref_chosen: -4.0,
            ref_rejected: -1.5,
            beta,
        };
        let (lg, w) = dpo_loss_grad(&model, &[pair])?;
        let d = decomposed_grad(&model, &[pair])?;
        let gap = lg.grad.iter().zip(&d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "beta {beta:<6} z {:>8.4}  w {:.3e}  |grad| {:.3e}  max gap {gap:.1e}",
            w[0].z,
            w[0].w,
            lg.norm()
        );
    }
    let rep = decomposition_check(0, 100)?;
    println!("100 random pairs: max deviation {:.2e} (pass {})", rep.max_deviation, rep.pass);
    Ok(())
}
