//! Effective reproductive number estimation and additive modelling of its
//! logarithm against mobility and environmental covariates.
//!
//! The pipeline runs: [`panel`] ingestion and filtering, [`rt`] estimation,
//! [`gam`] fitting with GCV smoothing selection, and [`effects`] for partial
//! effects, per-province refits and leave-one-province-out validation.
//! [`synth`] generates panels with known ground truth.

// `!(x > 0.0)` guards are meant to reject NaN too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod effects;
pub mod error;
pub mod gam;
pub mod io;
pub mod panel;
pub mod rt;
pub mod smooth;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
