//! Sequential assimilation of leaf-area-index observations into a daily crop
//! model: an ensemble Kalman filter followed by an LSTM trained to emulate it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod base;
pub mod cli;
pub mod crop;
pub mod enkf;
pub mod error;
pub mod io;
pub mod lstm;
pub mod metrics;
pub mod pipeline;

pub use error::{Error, Result};
