//! Principled width upscaling of MLPs.
//!
//! The crate builds wider models from trained narrow ones so that both
//! parametrize the same function at every training step: weights are
//! duplicated and rescaled, hyperparameters and optimizer state are rescaled
//! in tandem with the optimizer's homogeneity degree, and width-dependent
//! hyperparameters follow the maximal-update scalings so the whole procedure
//! commutes with changing width. On top of the equivalence layer sit the
//! noise-injected upscaling driver, deterministic infinite-width oracles for
//! two linear test architectures, and a sweep harness for hyperparameter
//! transfer experiments.

#![allow(clippy::needless_range_loop)]

mod bytes;

pub mod checkpoint;
pub mod error;
pub mod harness;
pub mod infwidth;
pub mod linalg;
pub mod model;
pub mod mup;
pub mod optim;
pub mod trainer;
pub mod upscale;
pub mod widen;

pub use error::{Error, Result};
