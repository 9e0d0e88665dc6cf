//! Distillation-accelerated uncertainty modeling for multi-objective traffic
//! interception.
//!
//! The crate trains a progressive-layered-extraction (PLE) multi-task
//! classifier over a hierarchical click/online/cart/deal funnel, fits a SWAG
//! posterior over its weights, produces per-task predictive means and
//! variances by sampled inference, makes uncertainty-aware pass/intercept
//! decisions (including cross-task uncertainty substitution for sparse
//! labels), distills prediction and uncertainty into a single-pass student,
//! and numerically verifies the closed-form uncertainty expressions the
//! design rests on.

pub mod distill;
pub mod engine;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod evalbench;
pub mod losses;
pub mod ple;
pub mod rng;

pub mod inference;
pub mod intercept;
pub mod swag;
pub mod synth;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
