//! Learned search-region pruning for grid path planners, and benchmarks of
//! how learned planners and tabular RL agents cope with environment shift.

pub mod error;
pub mod encoder;
pub mod grid;
pub mod harness;
pub mod masked;
pub mod planners;
pub mod rl;

pub use error::{Error, Result};
