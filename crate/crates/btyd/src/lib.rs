//! Customer base analysis for non-contractual settings.
//!
//! The pipeline runs transaction logs through an RFM summary into two fitted
//! latent-heterogeneity models and out to per-customer predictions:
//!
//! * [`bgnbd`]: purchase frequency. Customers buy at Poisson rate λ while
//!   "alive" and drop out with probability p after each repeat purchase;
//!   λ ~ gamma(r, rate α) and p ~ beta(a, b) across the base.
//! * [`gammagamma`]: spend per transaction, gamma-distributed around a
//!   gamma-heterogeneous customer scale, independent of frequency.
//! * [`clv`]: combines survival probability, conditional expected purchases
//!   and expected spend into discounted customer lifetime value.
//!
//! [`simulate`] generates synthetic bases from known parameters (the crate's
//! own fitting routines recover them; see the acceptance suite), [`evaluate`]
//! scores calibration/holdout splits, and [`cli`] exposes the whole pipeline
//! as deterministic, file-to-file subcommands.

// Validation here is written `!(x > 0.0)` on purpose: it fails closed on
// NaN, which `x <= 0.0` would silently accept.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bgnbd;
pub mod clv;
pub mod evaluate;
pub mod gammagamma;
pub mod ingest;
pub mod numerics;
pub mod simulate;

pub mod cli;

pub use bgnbd::{BgnbdCoefs, BgnbdParams};
pub use clv::CustomerPrediction;
pub use gammagamma::{GgCoefs, GgParams};
pub use ingest::{RfmRow, TransactionLog, TransactionRecord};
pub use simulate::{SimulatedBase, SimulationConfig};
