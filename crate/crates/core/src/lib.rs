//! Ridge-regression estimators without hyper-parameter estimation.
//!
//! The crate implements, for the FIR linear regression model `Y = Phi theta + E`:
//!
//! - the maximum-likelihood estimator and the ridge (Tikhonov) regularized
//!   estimator over a shared thin-SVD cache ([`estimators`]),
//! - the empirical-Bayes marginal-likelihood tuner for the scalar prior
//!   scale `eta` ([`eb`]),
//! - a family of radial weighting functions whose generalized Bayes
//!   estimators match the excess MSE of the EB-tuned ridge estimator
//!   ([`prior`], [`bayes`]),
//! - the closed-form biased estimator built from the same family
//!   ([`biased`]),
//! - theoretical and empirical excess-MSE calculators ([`xmse`]),
//! - a reproducible Monte Carlo study harness comparing all of the above
//!   ([`study`]), and independent numerical cross-checks ([`checks`]).
//!
//! Everything is deterministic for a fixed seed: random streams are keyed by
//! `(seed, purpose, collection, rep)` so results do not depend on thread
//! count. The `parallel` feature (default) enables rayon data-parallel loops
//! over collections and replications; without it every path runs
//! sequentially.

pub mod bayes;
pub mod biased;
pub mod checks;
pub mod eb;
mod error;
pub mod estimators;
pub mod prior;
pub mod simulate;
pub mod streams;
pub mod study;
pub mod xmse;

pub use error::{Error, Result};
