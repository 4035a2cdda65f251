//! Identification of LPV state-space models in innovation form.
//!
//! The pipeline estimates an LPV moving-average-with-exogenous-inputs (MAX)
//! model by pseudo-linear regression ([`plr`]) and realizes a state-space
//! model from its sub-Markov parameters with a Ho-Kalman factorization
//! ([`ho_kalman`]). [`harness`] runs seeded Monte-Carlo studies of the whole
//! chain.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod ho_kalman;
pub mod lpv_ss;
pub mod markov;
pub mod multi_index;
pub mod plr;
pub mod predictor;
pub mod signal;

pub use error::{Error, Result};
pub use lpv_ss::{DataSet, Dims, LpvSsModel, NoiseSource};
pub use markov::{Path, SubMarkovTable};
pub use multi_index::{IndexString, StringSet};
pub use signal::Signal;
