//! Student's t function-space empirical Bayes regularisation for
//! MC-dropout Bayesian neural networks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod data;
pub mod distributions;
pub mod error;
pub mod kernel;
pub mod network;
pub mod numerics;
pub mod objective;
pub mod predict;
pub mod tape;
pub mod trainer;

pub use error::{Error, Result};
