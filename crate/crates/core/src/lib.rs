//! Photon correlation functions and two-photon indistinguishability for
//! driven two- and three-level quantum emitters.
//!
//! Rates are angular (1/s), delays in seconds. Density matrices are
//! column-stacked when acted on by superoperators.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod correlation;
pub mod curve;
pub mod emitter;
pub mod error;
pub mod fit;
pub mod indist;
pub mod io;
pub mod lindblad;
pub mod pipeline;
pub mod quadrature;
pub mod sim;
pub mod units;

pub use curve::{CorrelationCurve, Regime};
pub use error::{Error, Result};
