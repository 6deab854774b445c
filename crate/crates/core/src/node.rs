//! Goals, operations, and setup nodes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Root goal text of every repository run.
pub const REPO_GOAL_TEXT: &str = "To agentize the given repo";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoalOrigin {
    RepoRoot,
    TodoDerived,
    Validation,
    Knowledge,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GoalError {
    #[error("goal text must be non-empty")]
    EmptyText,
    #[error("goal id must be non-empty")]
    EmptyId,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Goal {
    pub id: String,
    pub text: String,
    pub origin: GoalOrigin,
    /// Workspace-relative paths that must exist before a node with this goal
    /// may run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
}

impl Goal {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        origin: GoalOrigin,
    ) -> Result<Self, GoalError> {
        let id = id.into();
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GoalError::EmptyText);
        }
        if id.is_empty() {
            return Err(GoalError::EmptyId);
        }
        Ok(Self {
            id,
            text,
            origin,
            inputs: Vec::new(),
        })
    }

    pub fn with_inputs(mut self, inputs: Vec<String>) -> Self {
        self.inputs = inputs;
        self
    }
}

/// A tool call chosen by the planner for one goal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Operation {
    pub tool: String,
    #[serde(default)]
    pub arguments: BTreeMap<String, Value>,
    #[serde(default)]
    pub rationale: String,
}

impl Operation {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            arguments: BTreeMap::new(),
            rationale: String::new(),
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }

    pub fn because(mut self, rationale: impl Into<String>) -> Self {
        self.rationale = rationale.into();
        self
    }

    pub fn str_arg(&self, key: &str) -> Option<&str> {
        self.arguments.get(key).and_then(Value::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeState {
    Pending,
    Running,
    Done,
    Failed,
}

impl NodeState {
    pub const ALL: [NodeState; 4] = [
        NodeState::Pending,
        NodeState::Running,
        NodeState::Done,
        NodeState::Failed,
    ];

    /// The legal-transition table. `Done` is absorbing; `Failed -> Pending`
    /// is the retry reset.
    pub fn can_transition(self, target: NodeState) -> bool {
        matches!(
            (self, target),
            (NodeState::Pending, NodeState::Running)
                | (NodeState::Running, NodeState::Done)
                | (NodeState::Running, NodeState::Failed)
                | (NodeState::Failed, NodeState::Pending)
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Pending => "pending",
            NodeState::Running => "running",
            NodeState::Done => "done",
            NodeState::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition {from:?} -> {to:?} on node {node}")]
pub struct IllegalTransition {
    pub node: String,
    pub from: NodeState,
    pub to: NodeState,
}

/// A state change that the caller records in the run log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transition {
    pub node: String,
    pub from: NodeState,
    pub to: NodeState,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NodeError {
    #[error("node weight must be strictly positive, got {0}")]
    NonPositiveWeight(f64),
}

/// One setup step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Node {
    pub id: String,
    /// Creation ordinal inside its graph; topological tie-break key.
    pub ordinal: u64,
    pub goal: Goal,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation: Option<Operation>,
    /// Snapshot reference: length of the trajectory context after this
    /// node's increment was merged.
    #[serde(default)]
    pub context: usize,
    pub state: NodeState,
    #[serde(default)]
    pub followups: Vec<Goal>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub resource_demands: BTreeMap<String, u32>,
    /// Executed by running a nested trajectory rather than a tool call.
    #[serde(default)]
    pub delegate: bool,
    /// Number of times this node has been started.
    #[serde(default)]
    pub attempts: u32,
}

impl Node {
    pub fn new(id: impl Into<String>, ordinal: u64, goal: Goal) -> Self {
        Self {
            id: id.into(),
            ordinal,
            goal,
            operation: None,
            context: 0,
            state: NodeState::Pending,
            followups: Vec::new(),
            weight: None,
            resource_demands: BTreeMap::new(),
            delegate: false,
            attempts: 0,
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Result<Self, NodeError> {
        if weight.is_nan() || weight <= 0.0 {
            return Err(NodeError::NonPositiveWeight(weight));
        }
        self.weight = Some(weight);
        Ok(self)
    }

    pub fn with_demand(mut self, resource: impl Into<String>, quantity: u32) -> Self {
        self.resource_demands.insert(resource.into(), quantity);
        self
    }

    pub fn transition_state(&mut self, target: NodeState) -> Result<Transition, IllegalTransition> {
        let from = self.state;
        if !from.can_transition(target) {
            return Err(IllegalTransition {
                node: self.id.clone(),
                from,
                to: target,
            });
        }
        self.state = target;
        match target {
            NodeState::Running => self.attempts += 1,
            NodeState::Pending => {
                self.operation = None;
                self.followups.clear();
            }
            NodeState::Done | NodeState::Failed => {}
        }
        Ok(Transition {
            node: self.id.clone(),
            from,
            to: target,
        })
    }

    /// Structural invariants that must hold whenever the node is at rest.
    pub fn check(&self) -> Result<(), &'static str> {
        if self.state == NodeState::Pending && self.operation.is_some() {
            return Err("pending node carries an operation");
        }
        if self.state == NodeState::Done && self.operation.is_none() {
            return Err("done node has no operation");
        }
        if self.operation.is_none() && !self.followups.is_empty() {
            return Err("followups recorded before an operation was applied");
        }
        if let Some(w) = self.weight {
            if w.is_nan() || w <= 0.0 {
                return Err("non-positive weight");
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node() -> Node {
        Node::new("n-1", 0, Goal::new("g-1", "do it", GoalOrigin::RepoRoot).unwrap())
    }

    #[test]
    fn pending_to_running() {
        let mut n = node();
        let t = n.transition_state(NodeState::Running).unwrap();
        assert_eq!((t.from, t.to), (NodeState::Pending, NodeState::Running));
        assert_eq!(n.state, NodeState::Running);
        assert_eq!(n.attempts, 1);
    }

    #[test]
    fn running_to_done() {
        let mut n = node();
        n.transition_state(NodeState::Running).unwrap();
        n.transition_state(NodeState::Done).unwrap();
        assert_eq!(n.state, NodeState::Done);
    }

    #[test]
    fn done_is_terminal() {
        let mut n = node();
        n.transition_state(NodeState::Running).unwrap();
        n.transition_state(NodeState::Done).unwrap();
        let err = n.transition_state(NodeState::Running).unwrap_err();
        assert_eq!(err.from, NodeState::Done);
        assert_eq!(n.state, NodeState::Done);
    }

    #[test]
    fn retry_reset_clears_operation() {
        let mut n = node();
        n.transition_state(NodeState::Running).unwrap();
        n.operation = Some(Operation::new("exec-script"));
        n.transition_state(NodeState::Failed).unwrap();
        n.transition_state(NodeState::Pending).unwrap();
        assert!(n.operation.is_none());
        assert!(n.check().is_ok());
    }

    #[test]
    fn weight_must_be_positive() {
        assert!(node().with_weight(0.0).is_err());
        assert!(node().with_weight(-1.0).is_err());
        assert!(node().with_weight(f64::NAN).is_err());
        assert_eq!(node().with_weight(2.5).unwrap().weight, Some(2.5));
    }

    #[test]
    fn empty_goal_rejected() {
        assert_eq!(Goal::new("g", "  ", GoalOrigin::TodoDerived), Err(GoalError::EmptyText));
    }
}
