//! Steering opinion dynamics on social networks toward a target opinion
//! under a control budget, with online identification of agent
//! susceptibilities.

pub mod baselines;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod estimator;
pub mod feasibility;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod online;

pub use error::{Error, Result};
