//! Flare regression: linear regression with a zero-mean Gaussian plus
//! positive-support exponential error mixture, the exponentially-modified
//! Gaussian (EMG) regression it is compared against, and the surrounding
//! inference, simulation and aiming-data tooling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod data;
pub mod distributions;
pub mod emg;
pub mod error;
pub mod flare;
pub mod inference;
pub mod ingest;
pub mod linalg;
pub mod simulation;
pub mod special;

pub use data::Dataset;
pub use distributions::{EmgParams, FlareParams};
pub use error::{Error, Result};
