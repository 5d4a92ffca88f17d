//! Task transferability and hardness from label statistics.
//!
//! The conditional entropy `H(Y|Z)` of a target label sequence given a source
//! label sequence bounds how well a representation trained on the source
//! transfers: the target log-likelihood of the transferred model is at least
//! `l_Z - H(Y|Z)`. This crate estimates those entropies from label tables,
//! ranks sources and tasks, and checks the bound numerically with small
//! softmax models on synthetic data.

pub mod cli;
pub mod entropy;
pub mod error;
pub mod labels;
pub mod plot;
pub mod softmax;
pub mod stats;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
