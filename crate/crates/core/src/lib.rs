//! Learning-based nonlinear model predictive control of antagonistic pneumatic
//! soft robots with recurrent (GRU/LSTM) dynamics models.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod data;
pub mod error;
pub mod hpo;
pub mod nmpc;
pub mod plant;
pub mod rnn;
pub mod runtime;

pub use error::{Error, Result};
