//! Samples from tabular and recurrent policies at several temperatures and
//! checks the returned log-probs against a fresh forward pass.
//!
//! `cargo run --example policy_sampling`

use festlab::policy::{PolicySpec, SamplerConfig, Vocab};
use festlab::rng;

fn main() -> festlab::Result<()> {
    let vocab = Vocab::new(["a", "b", "c", "$"])?;
    let prompt = vocab.parse("a b")?;
    let specs = [
        PolicySpec::TabularNgram {
            window: 2,
            prompt_buckets: 8,
        },
        PolicySpec::Recurrent { hidden: 8 },
    ];
    for spec in specs {
        let mut model = spec.build(vocab.clone(), 6, 3)?;
        let mut r = rng::substream(4, &[]);
        for p in model.params_mut() {
            *p = rand::Rng::gen_range(&mut r, -1.0..1.0);
        }
        println!("{} policy, {} parameters", model.kind_name(), model.dim());
        for temperature in [0.3, 1.0, 3.0] {
            let cfg = SamplerConfig {
                temperature,
                max_len: 6,
                seed: 0,
            };
            let mut r = rng::substream(cfg.seed, &[temperature.to_bits()]);
            for _ in 0..3 {
                let s = model.sample(&prompt, &cfg, &mut r)?;
                let fresh = model.seq_logprob(&prompt, &s.response)?;
                let logged: f64 = s.logprobs.iter().sum();
                println!(
                    "  T={temperature:<4} {:<14} log pi = {fresh:>8.4}  (logged {logged:>8.4})  {}",
                    vocab.spell(&s.response),
                    if s.response.terminated { "ended" } else { "truncated" }
                );
            }
        }
    }
    Ok(())
}
