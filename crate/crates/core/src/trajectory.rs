//! A goal-scoped node DAG with its own context and validation set.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::context::Context;
use crate::graph::TaskGraph;
use crate::node::{Goal, Node};
use crate::validation::{GateReport, ValidationSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryStatus {
    #[default]
    Open,
    Passed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Trajectory {
    pub id: String,
    pub goal: Goal,
    pub graph: TaskGraph,
    pub context: Context,
    pub validation: ValidationSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<String>,
    pub status: TrajectoryStatus,
    /// Ids of trajectories spawned from this one's nodes.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<String>,
    /// Report of the most recent closing gate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateReport>,
}

impl Trajectory {
    pub fn new(
        id: impl Into<String>,
        goal: Goal,
        root: Node,
        context: Context,
        parent: Option<String>,
    ) -> Self {
        let id = id.into();
        Self {
            validation: ValidationSet::new(id.clone(), Vec::new()),
            id,
            goal,
            graph: TaskGraph::new(root),
            context,
            parent,
            status: TrajectoryStatus::Open,
            children: Vec::new(),
            gate: None,
        }
    }

    pub fn check(&self) -> Result<(), String> {
        self.graph.check().map_err(|e| alloc::format!("{e}"))?;
        if self.graph.root_node().goal != self.goal {
            return Err("root goal differs from trajectory goal".into());
        }
        if self.status == TrajectoryStatus::Passed
            && !self.gate.as_ref().is_some_and(|g| g.passed)
        {
            return Err("trajectory passed without a passing gate".into());
        }
        Ok(())
    }
}
