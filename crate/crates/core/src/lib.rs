//! Lognormal-mixture model for the forward density of an asset price:
//! static calibration to a forward and call options, price dynamics driven by
//! a Brownian motion, and recovery of the driver from observed prices.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod black;
pub mod calibration;
pub mod cone;
pub mod config;
pub mod dynamics;
pub mod error;
pub mod ingest;
pub mod normal;
pub mod quad;
pub mod simulation;
pub mod tracking;

pub use error::{Error, Result};
