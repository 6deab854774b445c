//! Domain model for turning a code repository into a repository agent.
//!
//! This crate holds everything that does not need an operating system: the
//! goal/node/trajectory model, the setup task graph and its scheduling
//! decisions, validation-gate semantics, the scripted plan matcher, the code
//! knowledge graph and usage knowledge base, A2A wire types, and the
//! benchmark metrics. It is `no_std` and only needs `alloc`.
//!
//! Filesystem access, process execution, HTTP and the CLI live in the
//! `agentizer` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod a2a;
pub mod bench;
pub mod context;
pub mod env;
pub mod graph;
pub mod id;
pub mod knowledge;
pub mod node;
pub mod planner;
pub mod rank;
pub mod todo;
pub mod trajectory;
pub mod validation;

pub use context::{Context, ContextItem, ContextKind};
pub use env::{Artifact, ArtifactKind, EnvState, EnvStatus};
pub use graph::{ResourceCaps, RunLimits, TaskGraph};
pub use id::IdGen;
pub use node::{Goal, GoalOrigin, Node, NodeState, Operation};
pub use trajectory::{Trajectory, TrajectoryStatus};
