//! Prompts, demonstrations and verifier outcomes for both synthetic tasks.
//!
//! `cargo run --example task_tour`

use festlab::rng;
use festlab::tasks::{gen_dataset, write_dataset, TaskSpec};

fn main() -> festlab::Result<()> {
    for task in [TaskSpec::summod(10, vec![1, 2]).with_hard(vec![5], 0.5), TaskSpec::paren(vec![2, 4])] {
        let vocab = task.vocab();
        println!("{}: vocabulary {:?}", task.name.as_str(), vocab.names());
        let data = gen_dataset(&task, 3, 3, 7)?;
        for d in &data.expert {
            let wrong = vocab.seq(vec![0, vocab.eos()])?;
            println!(
                "  prompt {:<18} demo {:<14} verify(demo) = {}  verify({}) = {}",
                vocab.spell(&d.prompt.tokens),
                vocab.spell(&d.response),
                task.verify(&d.prompt.tokens, &d.response),
                vocab.spell(&wrong),
                task.verify(&d.prompt.tokens, &wrong),
            );
        }
        // demonstrations are one of many valid answers
        let p = &data.answer_only[0];
        let a = task.demo(&p.tokens, &mut rng::substream(1, &[]))?;
        let b = task.demo(&p.tokens, &mut rng::substream(2, &[]))?;
        println!("  two demos for {}: {} / {}", vocab.spell(&p.tokens), vocab.spell(&a), vocab.spell(&b));
        print!("{}", write_dataset(&task, &data.expert_records())?);
    }
    Ok(())
}
