//! Runs the full gradient-oracle suite and prints the aligned report.
//!
//! `cargo run --release --example grad_check`

use festlab::diagnostics::{run_suite, Scope, SuiteSettings};

fn main() -> festlab::Result<()> {
    let report = run_suite(Scope::All, SuiteSettings::default())?;
    print!("{}", report.to_text());
    let control = run_suite(Scope::NegativeControl, SuiteSettings::default())?;
    println!("negative control detected: {}", !control.pass);
    std::process::exit(if report.pass && !control.pass { 0 } else { 1 });
}
