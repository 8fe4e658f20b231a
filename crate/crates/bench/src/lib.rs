//! Experiment runner for the tempered samplers: result tables, chains,
//! trajectory illustrations and trace plots.

pub mod config;
pub mod error;
pub mod experiment;
pub mod svg;
pub mod trace;
pub mod trajectories;

pub use error::{BenchError, Result};
