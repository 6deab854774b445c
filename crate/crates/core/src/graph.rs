//! The setup DAG and the pure parts of scheduling it.
//!
//! Edges are cycle-checked on insertion, so a `TaskGraph` is acyclic at all
//! times. Ordering ties are broken by node creation ordinal, which keeps
//! topological orders, ready sets and dispatch selections deterministic.

use alloc::collections::{BTreeMap, BTreeSet, BinaryHeap};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Reverse;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::node::{Node, NodeState};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("duplicate node {0}")]
    DuplicateNode(String),
    #[error("edge {from} -> {to} would create a cycle")]
    CycleDetected { from: String, to: String },
    #[error("node {node} demands {demand} of {resource} but capacity is {capacity}")]
    InvalidDemand {
        node: String,
        resource: String,
        demand: u32,
        capacity: u32,
    },
    #[error("graph invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TaskGraph {
    pub nodes: BTreeMap<String, Node>,
    pub edges: BTreeSet<(String, String)>,
    pub root: String,
}

impl TaskGraph {
    pub fn new(root: Node) -> Self {
        let root_id = root.id.clone();
        let mut nodes = BTreeMap::new();
        nodes.insert(root_id.clone(), root);
        Self {
            nodes,
            edges: BTreeSet::new(),
            root: root_id,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &str) -> Option<&mut Node> {
        self.nodes.get_mut(id)
    }

    pub fn root_node(&self) -> &Node {
        &self.nodes[&self.root]
    }

    pub fn next_ordinal(&self) -> u64 {
        self.nodes.values().map(|n| n.ordinal + 1).max().unwrap_or(0)
    }

    pub fn add_node(&mut self, node: Node) -> Result<(), GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Insert `from -> to`. On error the graph is unchanged.
    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<(), GraphError> {
        for id in [from, to] {
            if !self.nodes.contains_key(id) {
                return Err(GraphError::UnknownNode(id.into()));
            }
        }
        if from == to || self.reaches(to, from) {
            return Err(GraphError::CycleDetected {
                from: from.into(),
                to: to.into(),
            });
        }
        self.edges.insert((from.into(), to.into()));
        Ok(())
    }

    /// Whether a directed path leads from `src` to `dst`.
    pub fn reaches(&self, src: &str, dst: &str) -> bool {
        let mut stack = alloc::vec![src];
        let mut seen = BTreeSet::new();
        while let Some(cur) = stack.pop() {
            if cur == dst {
                return true;
            }
            if !seen.insert(cur) {
                continue;
            }
            stack.extend(self.successors(cur));
        }
        false
    }

    pub fn successors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .range::<(String, String), _>((
                core::ops::Bound::Included((String::from(id), String::new())),
                core::ops::Bound::Unbounded,
            ))
            .take_while(move |(f, _)| f == id)
            .map(|(_, t)| t.as_str())
    }

    pub fn predecessors<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges
            .iter()
            .filter(move |(_, t)| t == id)
            .map(|(f, _)| f.as_str())
    }

    fn by_ordinal<'a, I: IntoIterator<Item = &'a str>>(&'a self, ids: I) -> Vec<String> {
        let mut v: Vec<&Node> = ids.into_iter().filter_map(|id| self.nodes.get(id)).collect();
        v.sort_by_key(|n| n.ordinal);
        v.into_iter().map(|n| n.id.clone()).collect()
    }

    /// Kahn's algorithm with a min-heap on creation ordinal.
    pub fn topological_order(&self) -> Vec<String> {
        let mut indegree: BTreeMap<&str, usize> =
            self.nodes.keys().map(|k| (k.as_str(), 0)).collect();
        for (_, to) in &self.edges {
            *indegree.get_mut(to.as_str()).expect("edge endpoint exists") += 1;
        }
        let mut heap: BinaryHeap<Reverse<(u64, &str)>> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| Reverse((self.nodes[*id].ordinal, *id)))
            .collect();
        let mut out = Vec::with_capacity(self.nodes.len());
        while let Some(Reverse((_, id))) = heap.pop() {
            out.push(String::from(id));
            for succ in self.successors(id) {
                let d = indegree.get_mut(succ).expect("edge endpoint exists");
                *d -= 1;
                if *d == 0 {
                    heap.push(Reverse((self.nodes[succ].ordinal, succ)));
                }
            }
        }
        out
    }

    /// The node's pre-predicate: every predecessor is done and every
    /// declared input exists.
    pub fn pre_satisfied(&self, id: &str, input_exists: &dyn Fn(&str) -> bool) -> bool {
        let Some(node) = self.nodes.get(id) else {
            return false;
        };
        self.predecessors(id)
            .all(|p| self.nodes[p].state == NodeState::Done)
            && node.goal.inputs.iter().all(|p| input_exists(p))
    }

    /// A pending node with a failed predecessor cannot become ready during
    /// the current run.
    pub fn blocked(&self, id: &str) -> bool {
        self.predecessors(id)
            .any(|p| self.nodes[p].state == NodeState::Failed)
    }

    /// Pending nodes whose pre-predicate holds, in creation order.
    pub fn ready_set(&self, input_exists: &dyn Fn(&str) -> bool) -> Vec<String> {
        let ids = self
            .nodes
            .values()
            .filter(|n| n.state == NodeState::Pending)
            .filter(|n| self.pre_satisfied(&n.id, input_exists))
            .map(|n| n.id.as_str());
        self.by_ordinal(ids)
    }

    pub fn all_done(&self) -> bool {
        self.nodes.values().all(|n| n.state == NodeState::Done)
    }

    pub fn count_in(&self, state: NodeState) -> usize {
        self.nodes.values().filter(|n| n.state == state).count()
    }

    /// Check every structural invariant: endpoints exist, the graph is
    /// acyclic, and the root is the only node without predecessors.
    pub fn check(&self) -> Result<(), GraphError> {
        if !self.nodes.contains_key(&self.root) {
            return Err(GraphError::UnknownNode(self.root.clone()));
        }
        for (f, t) in &self.edges {
            for id in [f, t] {
                if !self.nodes.contains_key(id) {
                    return Err(GraphError::UnknownNode(id.clone()));
                }
            }
        }
        if self.topological_order().len() != self.nodes.len() {
            return Err(GraphError::Invariant("cycle present".into()));
        }
        let targets: BTreeSet<&str> = self.edges.iter().map(|(_, t)| t.as_str()).collect();
        if targets.contains(self.root.as_str()) {
            return Err(GraphError::Invariant("root has a predecessor".into()));
        }
        for id in self.nodes.keys() {
            if id != &self.root && !targets.contains(id.as_str()) {
                return Err(GraphError::Invariant(format!("{id} is a second source")));
            }
        }
        for node in self.nodes.values() {
            node.check().map_err(|e| GraphError::Invariant(format!("{}: {e}", node.id)))?;
        }
        Ok(())
    }

    /// Render as Graphviz DOT.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph setup {\n  rankdir=LR;\n");
        for id in self.topological_order() {
            let n = &self.nodes[&id];
            let label = n.goal.text.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(
                out,
                "  \"{}\" [label=\"{}\\n[{}]\"];",
                n.id,
                label,
                n.state.as_str()
            );
        }
        for (f, t) in &self.edges {
            let _ = writeln!(out, "  \"{f}\" -> \"{t}\";");
        }
        out.push_str("}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ResourceCaps {
    #[serde(default)]
    pub capacities: BTreeMap<String, u32>,
    pub default_parallelism: usize,
}

impl Default for ResourceCaps {
    fn default() -> Self {
        Self {
            capacities: BTreeMap::new(),
            default_parallelism: 1,
        }
    }
}

impl ResourceCaps {
    pub fn new(default_parallelism: usize) -> Result<Self, GraphError> {
        if default_parallelism == 0 {
            return Err(GraphError::Invariant("parallelism must be positive".into()));
        }
        Ok(Self {
            capacities: BTreeMap::new(),
            default_parallelism,
        })
    }

    pub fn with_capacity(mut self, resource: impl Into<String>, cap: u32) -> Result<Self, GraphError> {
        if cap == 0 {
            return Err(GraphError::Invariant("capacity must be positive".into()));
        }
        self.capacities.insert(resource.into(), cap);
        Ok(self)
    }

    /// Reject a node whose demand alone exceeds a capacity; such a node
    /// could never be dispatched.
    pub fn check_demand(&self, node: &Node) -> Result<(), GraphError> {
        for (resource, &demand) in &node.resource_demands {
            if let Some(&capacity) = self.capacities.get(resource) {
                if demand > capacity {
                    return Err(GraphError::InvalidDemand {
                        node: node.id.clone(),
                        resource: resource.clone(),
                        demand,
                        capacity,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Greedy maximal selection from `ready` (already in tie-break order) such
/// that summed demands stay within capacities and the count within the
/// parallelism limit.
pub fn dispatch_parallel(graph: &TaskGraph, ready: &[String], caps: &ResourceCaps) -> Vec<String> {
    let mut used: BTreeMap<&str, u32> = BTreeMap::new();
    let mut chosen = Vec::new();
    for id in ready {
        if chosen.len() >= caps.default_parallelism {
            break;
        }
        let Some(node) = graph.node(id) else { continue };
        let fits = node.resource_demands.iter().all(|(r, &d)| {
            match caps.capacities.get(r) {
                Some(&cap) => used.get(r.as_str()).copied().unwrap_or(0) + d <= cap,
                None => true,
            }
        });
        if fits {
            for (r, &d) in &node.resource_demands {
                *used.entry(r.as_str()).or_insert(0) += d;
            }
            chosen.push(id.clone());
        }
    }
    chosen
}

/// Step and retry budgets for one repository run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunLimits {
    pub max_steps: u32,
    pub max_retries: u32,
}

impl RunLimits {
    pub const DEFAULT_MAX_STEPS: u32 = 200;
    pub const DEFAULT_MAX_RETRIES: u32 = 10;
}

impl Default for RunLimits {
    fn default() -> Self {
        Self {
            max_steps: Self::DEFAULT_MAX_STEPS,
            max_retries: Self::DEFAULT_MAX_RETRIES,
        }
    }
}
