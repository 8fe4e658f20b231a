pub mod diagnostics;
pub mod error;
pub mod integrators;
pub mod linalg;
pub mod metrics;
pub mod samplers;
pub mod targets;
pub mod tuning;

pub use error::{Error, Result};
