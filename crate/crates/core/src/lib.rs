//! Multi-view Bayesian latent factor model with a task-oriented and a
//! generative latent space, trained by mean-field coordinate ascent.
//!
//! The usual flow is [`data::load_dataset`] → [`data::standardize`] →
//! [`inference::fit`] → [`predict::predict`] / [`impute::impute`].

pub mod analysis;
pub mod cli;
pub mod data;
pub mod error;
pub mod impute;
pub mod inference;
pub mod math;
pub mod metrics;
pub mod predict;
pub mod state;
pub mod synth;

pub use error::{Error, Result};
