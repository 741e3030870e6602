//! Experiment configuration, CSV emission and command implementations for
//! the `semcomm` binary.

pub mod config;
pub mod csvio;
pub mod run;
