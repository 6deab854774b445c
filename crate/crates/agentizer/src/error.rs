use std::path::PathBuf;

use agentizer_core::graph::GraphError;
use agentizer_core::planner::{PlanError, PlannerError};
use agentizer_core::validation::GateReport;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("usage: {0}")]
    Usage(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("step budget of {max_steps} node executions exceeded")]
    StepBudgetExceeded { max_steps: u32 },
    #[error("livelock in trajectory {trajectory}: {queued} queued nodes can never become ready")]
    Livelock { trajectory: String, queued: usize },
    #[error("gave up after {retries} retries")]
    RetriesExhausted { retries: u32, report: Box<GateReport> },
    #[error("no validation cases could be discovered or synthesized for {goal:?}")]
    SynthesisFailed { goal: String },
    #[error("port {port} is in use")]
    PortInUse { port: u16 },
    #[error("malformed suite: {0}")]
    MalformedSuite(String),
    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for caller mistakes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Precondition(_) | Error::MalformedSuite(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
