//! Segmental hidden Markov models whose per-segment linear regressions
//! carry Gaussian random effects. Covers learning by EM, segmentation,
//! scoring, one-step prediction and k-NN classification of waveforms.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod classify;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod inference;
pub mod io;
pub mod learning;
pub mod linalg;
pub mod model;
pub mod synth;

pub use error::{Error, Result};
