//! Environment state: what has been installed and which goals are complete.

use alloc::collections::BTreeSet;
use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArtifactKind {
    Package,
    Dataset,
    Model,
    File,
}

/// Something the setup process put into the environment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Artifact {
    pub kind: ArtifactKind,
    pub name: String,
    /// Workspace-relative path.
    pub path: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvStatus {
    #[default]
    InProgress,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("environment can only finish after the repository gate passed")]
pub struct GateNotPassed;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EnvState {
    pub workspace_root: String,
    pub installed_artifacts: BTreeSet<Artifact>,
    pub completed_goals: BTreeSet<String>,
    pub status: EnvStatus,
}

impl EnvState {
    pub fn new(workspace_root: impl Into<String>) -> Self {
        Self {
            workspace_root: workspace_root.into(),
            ..Self::default()
        }
    }

    pub fn record_artifacts<I: IntoIterator<Item = Artifact>>(&mut self, artifacts: I) {
        self.installed_artifacts.extend(artifacts);
    }

    /// Completed goals only ever grow.
    pub fn complete_goal(&mut self, goal_id: impl Into<String>) {
        self.completed_goals.insert(goal_id.into());
    }

    pub fn finish(&mut self, repo_gate_passed: bool) -> Result<(), GateNotPassed> {
        if !repo_gate_passed {
            return Err(GateNotPassed);
        }
        self.status = EnvStatus::Finished;
        Ok(())
    }

    pub fn fail(&mut self) {
        self.status = EnvStatus::Failed;
    }

    pub fn is_finished(&self) -> bool {
        self.status == EnvStatus::Finished
    }
}
