//! Interpretable off-policy learning with unions of hyperboxes.
//!
//! A policy treats (`+1`) exactly when the covariates fall into one of at most
//! `M` axis-aligned boxes, and withholds treatment (`-1`) otherwise. Policies
//! are learned by minimizing a weighted mismatch objective over observational
//! data with a branch-and-price solver whose pricing step is an exact
//! hyperbox search.
//!
//! Module map:
//!
//! * [`data`]: samples, datasets, boxes, policies and CSV ingestion.
//! * [`nuisance`]: outcome and propensity models (fitted or exact).
//! * [`scores`]: DM / IPS / DR per-sample weights.
//! * [`lp`]: LP solver facade with duals and a 0/1 branch-and-bound.
//! * [`master`]: restricted master problems and their duals.
//! * [`pricing`]: exact hyperbox search for the most negative reduced cost.
//! * [`bnp`]: the branch-and-price driver.
//! * [`simgen`]: synthetic data-generating processes.
//! * [`eval`]: empirical objective, Monte-Carlo policy value and regret.
//! * [`cli`]: command-line surface, policy documents and rendering.

pub mod bnp;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod lp;
pub mod master;
pub mod nuisance;
pub mod pricing;
pub mod scores;
pub mod simgen;

pub use error::{Error, Result};
