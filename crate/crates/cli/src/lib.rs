//! Experiment runner: config parsing, (method, seed) grids, aggregation
//! across seeds and SVG comparison plots.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod plot;
pub mod records;
pub mod runner;

pub use error::{CliError, Result};
