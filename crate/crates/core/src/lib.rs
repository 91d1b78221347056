//! Desk-scale laboratory for demonstration-guided RLVR objectives.
//!
//! The crate trains tiny autoregressive policies on synthetic tasks with
//! exact verifiers, using GRPO, DPO, semi-online FEST-DPO and FEST-GRPO, and
//! ships oracle checks for every analytic gradient.
//!
//! * [`policy`]: tabular and recurrent policies with exact log-probs and gradients.
//! * [`tasks`]: SUMMOD and PAREN with verifiers, demonstrations and dataset files.
//! * [`objectives`]: losses and gradients.
//! * [`trainer`]: the training loop, optimizer, schedules and evaluation.
//! * [`diagnostics`]: finite-difference, enumeration and implicit-advantage analyses.

pub mod diagnostics;
pub mod error;
pub mod math;
pub mod objectives;
pub mod policy;
pub mod rng;
pub mod tasks;
pub mod trainer;

pub use error::{Error, Result};
