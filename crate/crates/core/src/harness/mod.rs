//! Experiment configuration, execution and output.

pub mod config;
pub mod emit;
pub mod run;
