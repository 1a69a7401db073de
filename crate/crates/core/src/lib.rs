//! Inverse-probability-of-censoring-weighted (IPCW) estimators of direct,
//! indirect, total, and overall treatment effects under partial interference,
//! with right-censored outcomes.
//!
//! The pipeline: ingest grouped survival data ([`data`]), fit the
//! random-intercept logistic treatment model ([`propensity`]) and the
//! gamma-frailty censoring model ([`censoring`]), form the weighted group
//! summaries and effect contrasts ([`ipcw`]), and compute standard errors by
//! stacking all estimating equations into one empirical sandwich
//! ([`inference`]). The [`simulation`] module generates studies from a
//! configurable process, keeps the counterfactual bookkeeping needed for a
//! brute-force truth oracle, and runs Monte Carlo replication studies.

pub mod censoring;
pub mod data;
pub mod error;
pub mod inference;
pub mod ipcw;
pub mod numeric;
pub mod optim;
pub mod policy;
pub mod propensity;
pub mod quadrature;
pub mod simulation;

pub use error::{Error, Result};
