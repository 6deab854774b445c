//! Repository agentization: setup trajectories over a sandboxed workspace,
//! validation gates, knowledge extraction, and the A2A service layer.

pub mod a2a;
pub mod bench;
pub mod engine;
pub mod error;
pub mod knowledge;
pub mod pipeline;
pub mod planner;
pub mod runlog;
pub mod sandbox;
pub mod tools;
pub mod validation;
pub mod workspace;

pub use error::{Error, Result};
