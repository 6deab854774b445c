//! Planner backends: a scripted plan file for offline, reproducible runs and
//! an OpenAI-compatible chat endpoint.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use agentizer_core::planner::Planner;

use crate::{Error, Result};

pub mod llm;
pub mod scripted;
pub mod summary;

pub use llm::{LlmConfig, LlmPlanner};
pub use scripted::ScriptedPlanner;

/// Plan file looked up in the repository when none is given.
pub const PLAN_FILE: &str = "agentizer.plan.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum PlannerKind {
    Scripted,
    Llm,
}

/// Build the planner for a run over `repo`.
pub fn build(kind: PlannerKind, repo: &Path, plan_file: Option<&Path>) -> Result<Arc<dyn Planner>> {
    match kind {
        PlannerKind::Scripted => {
            let path: PathBuf = plan_file.map(Path::to_path_buf).unwrap_or_else(|| repo.join(PLAN_FILE));
            if !path.is_file() {
                return Err(Error::Precondition(format!(
                    "scripted planner needs a plan file; {} does not exist",
                    path.display()
                )));
            }
            Ok(Arc::new(ScriptedPlanner::load(&path)?))
        }
        PlannerKind::Llm => Ok(Arc::new(LlmPlanner::new(LlmConfig::from_env()?))),
    }
}
