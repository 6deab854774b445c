//! Validation cases, gate reports, and the retry decision.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::context::{ContextItem, ContextKind};
use crate::graph::RunLimits;
use crate::node::NodeState;
use crate::trajectory::Trajectory;

/// Expected-output matcher. Closed set so gates stay auditable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Matcher {
    /// Trimmed stdout equals `text` (also trimmed).
    ExactText { text: String },
    /// `path` exists and is non-empty after the input ran.
    FileExistsNonempty { path: String },
    /// The input's exit code equals `code`.
    ExitCode { code: i32 },
    /// SHA-256 (lowercase hex) of the file at `path`, or of stdout when no
    /// path is given.
    Digest {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        sha256: String,
    },
}

impl Matcher {
    pub fn well_formed(&self) -> Result<(), String> {
        match self {
            Matcher::ExactText { .. } | Matcher::ExitCode { .. } => Ok(()),
            Matcher::FileExistsNonempty { path } if path.trim().is_empty() => {
                Err("file-exists-nonempty needs a path".into())
            }
            Matcher::FileExistsNonempty { .. } => Ok(()),
            Matcher::Digest { sha256, path } => {
                if sha256.len() != 64 || !sha256.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(format!("digest {sha256:?} is not 64 hex digits"));
                }
                if matches!(path, Some(p) if p.trim().is_empty()) {
                    return Err("digest path is empty".into());
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    RepoTestSuite,
    RepoExample,
    Synthesized,
}

/// One executable `(input, expected)` pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ValidationCase {
    pub id: String,
    /// Shell command run in the workspace; may be empty when the matcher
    /// only inspects files.
    #[serde(default)]
    pub input: String,
    pub expected: Matcher,
    pub provenance: Provenance,
    /// Text of the goal this case gates. Required for synthesized cases.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<String>,
}

impl ValidationCase {
    pub fn check(&self) -> Result<(), String> {
        if self.id.is_empty() {
            return Err("validation case without id".into());
        }
        self.expected.well_formed()?;
        if self.provenance == Provenance::Synthesized && self.gates.is_none() {
            return Err(format!("synthesized case {} does not name its goal", self.id));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ValidationSet {
    pub trajectory: String,
    pub cases: Vec<ValidationCase>,
}

impl ValidationSet {
    pub fn new(trajectory: impl Into<String>, cases: Vec<ValidationCase>) -> Self {
        Self {
            trajectory: trajectory.into(),
            cases,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn gating<'a>(&'a self, goal_text: &'a str) -> impl Iterator<Item = &'a ValidationCase> + 'a {
        self.cases
            .iter()
            .filter(move |c| c.gates.as_deref() == Some(goal_text))
    }
}

/// Repository-wide set: union of trajectory sets, deduplicated by case id
/// (first occurrence wins).
pub fn union<'a, I>(sets: I) -> Vec<ValidationCase>
where
    I: IntoIterator<Item = &'a ValidationSet>,
{
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for set in sets {
        for case in &set.cases {
            if seen.insert(case.id.clone()) {
                out.push(case.clone());
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseOutcome {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CaseResult {
    pub case_id: String,
    pub outcome: CaseOutcome,
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GateReport {
    pub passed: bool,
    pub per_case: Vec<CaseResult>,
    pub evaluated_at: String,
}

impl GateReport {
    /// Conjunction over case outcomes; an empty list passes vacuously.
    pub fn from_results(per_case: Vec<CaseResult>, evaluated_at: impl Into<String>) -> Self {
        let passed = per_case.iter().all(|c| c.outcome == CaseOutcome::Pass);
        Self {
            passed,
            per_case,
            evaluated_at: evaluated_at.into(),
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.per_case.iter().filter(|c| c.outcome == CaseOutcome::Fail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryDecision {
    Retry,
    GiveUp { report: GateReport },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reflect_and_retry called with a passing report")]
pub struct ReportPassed;

/// Self-reflection after a failed gate.
///
/// `retries_done` counts re-runs already performed for this trajectory. While
/// it is below `limits.max_retries` the failing transcripts are appended to
/// the trajectory context, failed nodes are reset to pending, and the caller
/// re-runs the trajectory.
pub fn reflect_and_retry(
    traj: &mut Trajectory,
    report: &GateReport,
    limits: &RunLimits,
    retries_done: u32,
) -> Result<RetryDecision, ReportPassed> {
    if report.passed {
        return Err(ReportPassed);
    }
    if retries_done >= limits.max_retries {
        return Ok(RetryDecision::GiveUp {
            report: report.clone(),
        });
    }
    for failure in report.failures() {
        let payload = if failure.transcript.is_empty() {
            format!("validation case {} failed", failure.case_id)
        } else {
            format!("validation case {} failed:\n{}", failure.case_id, failure.transcript)
        };
        if let Ok(item) = ContextItem::new(ContextKind::CommandOutput, payload) {
            traj.context.push(item);
        }
    }
    let failed: Vec<String> = traj
        .graph
        .nodes
        .values()
        .filter(|n| n.state == NodeState::Failed)
        .map(|n| n.id.clone())
        .collect();
    for id in failed {
        if let Some(node) = traj.graph.node_mut(&id) {
            // Failed -> Pending is always legal.
            let _ = node.transition_state(NodeState::Pending);
        }
    }
    Ok(RetryDecision::Retry)
}
