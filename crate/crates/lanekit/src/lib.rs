//! File formats, checkpoints, reports and the `lanekit` command-line tool
//! built on [`lanekit_core`].

pub mod annotation;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod ppm;
pub mod report;

pub use error::{Error, Result};
