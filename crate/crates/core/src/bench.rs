//! Benchmark records and the completion/pass-rate metrics.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::planner::TokenUsage;
use crate::validation::Matcher;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskResult {
    #[default]
    NotRun,
    /// Ran and produced its output, but the matcher was not checked.
    Executed,
    Passed,
    FailedExecution,
    /// Ran and produced output that failed the matcher.
    FailedQuality,
}

impl TaskResult {
    pub fn executed(self) -> bool {
        matches!(self, TaskResult::Executed | TaskResult::Passed | TaskResult::FailedQuality)
    }

    pub fn passed(self) -> bool {
        self == TaskResult::Passed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TaskRecord {
    pub task_id: String,
    pub repo: String,
    pub query: String,
    pub expected: Matcher,
    pub result: TaskResult,
    #[serde(default)]
    pub tokens: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

/// A percentage stored as an integer count of hundredths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Percentage(pub u32);

impl Percentage {
    /// `100 * k / n` rounded half-up to two decimals, in exact integer
    /// arithmetic.
    pub fn ratio(k: u64, n: u64) -> Self {
        assert!(n > 0 && k <= n);
        Self(((20_000 * k + n) / (2 * n)) as u32)
    }

    pub fn hundredths(self) -> u32 {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 100.0
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.0 / 100, self.0 % 100)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("empty task list")]
    Empty,
    #[error("task {0} has no result")]
    NotRun(String),
}

fn rate(tasks: &[TaskRecord], hit: impl Fn(TaskResult) -> bool) -> Result<Percentage, MetricError> {
    if tasks.is_empty() {
        return Err(MetricError::Empty);
    }
    if let Some(t) = tasks.iter().find(|t| t.result == TaskResult::NotRun) {
        return Err(MetricError::NotRun(t.task_id.clone()));
    }
    let k = tasks.iter().filter(|t| hit(t.result)).count() as u64;
    Ok(Percentage::ratio(k, tasks.len() as u64))
}

/// Share of tasks whose run produced its output.
pub fn compute_ecr(tasks: &[TaskRecord]) -> Result<Percentage, MetricError> {
    rate(tasks, TaskResult::executed)
}

/// Share of tasks whose output also satisfied the matcher.
pub fn compute_tpr(tasks: &[TaskRecord]) -> Result<Percentage, MetricError> {
    rate(tasks, TaskResult::passed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct BenchReport {
    pub tasks: Vec<TaskRecord>,
    pub ecr: Percentage,
    pub tpr: Percentage,
    pub total_tokens: TokenUsage,
}

impl BenchReport {
    pub fn from_tasks(tasks: Vec<TaskRecord>) -> Result<Self, MetricError> {
        let ecr = compute_ecr(&tasks)?;
        let tpr = compute_tpr(&tasks)?;
        let mut total_tokens = TokenUsage::default();
        for t in &tasks {
            total_tokens += t.tokens;
        }
        Ok(Self {
            tasks,
            ecr,
            tpr,
            total_tokens,
        })
    }
}
