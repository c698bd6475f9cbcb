//! Shared numeric kernels: log-gamma/log-beta, the Gauss hypergeometric
//! series, a derivative-free simplex optimizer, finite-difference Hessians
//! and a seeded, platform-independent random source.
//!
//! Everything downstream (likelihoods, fitting, simulation) routes its
//! special-function and optimization needs through this module so that the
//! statistical code carries no numeric policy of its own.

mod optimize;
mod rng;
mod special;

pub use optimize::{
    invert_symmetric, nelder_mead, numerical_hessian, symmetric_eigenvalues, OptimResult,
    OptimizerConfig,
};
pub use rng::{rng_draws, DistributionSpec, SeededRng};
pub use special::{gauss_legendre, hyp2f1, ln_beta, ln_gamma};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("series did not converge within {terms} terms (last relative term {last_rel:.3e})")]
    NonConvergence { terms: usize, last_rel: f64 },
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Recursive midpoint pairwise summation.
///
/// Error grows O(log n) instead of O(n), and concatenating a slice with
/// itself doubles the result exactly (s + s is exact in binary floating
/// point), so per-row aggregates scale bit-reproducibly under duplication.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}
