//! Bayesian additive regression over identifiable binary-product trees.
//!
//! The fitted function is a sum of small trees, each tied to one covariate
//! subset and constrained to integrate to zero along each of its axes, so the
//! posterior directly yields a functional-ANOVA decomposition.

pub mod config;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod io;
pub mod posterior;
pub mod prior;
pub mod sampler;
pub mod synthetic;
pub mod tree;
pub mod workflow;

pub use error::{Error, Result};
