//! Distributional multi-objective variable elimination.
//!
//! Computes the set of joint actions of a multi-objective coordination graph
//! whose return distributions are not first-order stochastically dominated
//! (the ESR set), with local return distributions either supplied directly
//! or learned by conditional affine-coupling flows from sampled experience.

pub mod cli;
pub mod config;
pub mod distribution;
pub mod engine;
pub mod env;
pub mod error;
pub mod export;
pub mod flow;
pub mod graph;
pub mod learning;
pub mod oracle;
pub mod pruning;
pub mod seed;
pub mod stats;

pub use error::{Error, Result};
