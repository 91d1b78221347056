//! Exact expected reward and its gradient by enumeration, against the
//! Monte-Carlo REINFORCE estimate.
//!
//! `cargo run --release --example enumeration_oracle`

use festlab::diagnostics::enumerate::{enumeration_oracle, max_z_score, reinforce_monte_carlo, DEFAULT_LIMIT};
use festlab::policy::{PolicySpec, TokenSeq, Vocab};
use festlab::rng;

fn main() -> festlab::Result<()> {
    let vocab = Vocab::anonymous(4)?;
    let mut model = PolicySpec::TabularNgram {
        window: 1,
        prompt_buckets: 1,
    }
    .build(vocab.clone(), 3, 0)?;
    let mut r = rng::substream(1, &[]);
    for p in model.params_mut() {
        *p = rand::Rng::gen_range(&mut r, -1.0..1.0);
    }
    let prompt = vocab.seq(vec![0])?;
    // rewarded when the response ends right after a single `t1`
    let reward = |y: &TokenSeq| (y.tokens == [1, vocab.eos()]) as u8 as f64;
    let exact = enumeration_oracle(&model, &prompt, reward, 3, DEFAULT_LIMIT)?;
    println!(
        "{} sequences, total probability {:.15}, E[r] = {:.6}",
        exact.support, exact.total_prob, exact.expected_reward
    );
    let score = exact.score_mean.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    println!("max |E[grad log pi]| = {score:.2e}");
    let target: Vec<f64> = exact.reward_grad.iter().map(|g| -g).collect();
    for samples in [1_000, 10_000, 100_000] {
        let mc = reinforce_monte_carlo(&model, &prompt, reward, 3, samples, 2)?;
        let err = mc.mean.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{samples:>7} samples: max abs error {err:.2e}, worst {:.2} standard errors",
            max_z_score(&mc, &target)
        );
    }
    Ok(())
}
