//! Oracles and analyses: finite differences, exact enumeration, the
//! preference-gradient decomposition, gradient-norm scans and implicit
//! advantage reports.

pub mod decomposition;
pub mod enumerate;
pub mod fd;
pub mod gradnorm;
pub mod suite;
pub mod zreport;

pub use decomposition::{decomposition_check, DecompositionReport};
pub use enumerate::{enumerate_responses, enumeration_oracle, reinforce_monte_carlo, Oracle};
pub use fd::{finite_difference_check, FdReport, FdSettings, ModelKind, Objective};
pub use gradnorm::{grad_norm_scan, GradBucket, GradReport, GradScanConfig};
pub use suite::{run_suite, Scope, SuiteReport, SuiteSettings};
pub use zreport::{balance_point, beta_sweep, parse_beta_list, SweepEntry, ZReport};
