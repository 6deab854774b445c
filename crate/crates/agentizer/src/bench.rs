//! Benchmark harness: agentize each repository of a suite, run every task
//! through the resulting agent and score outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use agentizer_core::a2a::{shell_quote, slug, A2ARequest, ResponseStatus};
use agentizer_core::bench::{BenchReport, TaskRecord, TaskResult};
use agentizer_core::planner::{TokenUsage, UsageLedger};
use agentizer_core::validation::{CaseOutcome, Matcher, Provenance, ValidationCase};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::a2a::router::{fallback_plan, RemoteAgent};
use crate::a2a::Service;
use crate::pipeline::{agentize, AgentizeOptions};
use crate::sandbox::{Network, SandboxPolicy};
use crate::tools::nonempty;
use crate::validation::evaluate_case;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SuiteTask {
    pub task_id: String,
    /// Repository directory, relative to the suite file.
    pub repo: String,
    pub query: String,
    /// Skill to call; chosen from the query when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub skill: Option<String>,
    #[serde(default = "empty_object")]
    pub input: Value,
    /// Expected output file, relative to the agent's workspace.
    pub output_path: String,
    pub matcher: Matcher,
    /// Command whose stdout the matcher sees; defaults to printing the
    /// output file for text matchers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<String>,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Suite {
    pub tasks: Vec<SuiteTask>,
}

impl Suite {
    pub fn parse(text: &str) -> Result<Self> {
        let suite: Suite = serde_json::from_str(text).map_err(|e| Error::MalformedSuite(e.to_string()))?;
        if suite.tasks.is_empty() {
            return Err(Error::MalformedSuite("the suite has no tasks".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for t in &suite.tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(Error::MalformedSuite(format!("duplicate task id {}", t.task_id)));
            }
            t.matcher.well_formed().map_err(|e| Error::MalformedSuite(format!("{}: {e}", t.task_id)))?;
        }
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BenchOptions {
    pub agentize: AgentizeOptions,
    /// Where agent workspaces are created; a temporary directory otherwise.
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub report: BenchReport,
    /// Planner usage of every agentization, attributed per repository.
    pub ledger: UsageLedger,
    pub workspaces: BTreeMap<String, PathBuf>,
}

struct Agent {
    service: Service,
    policy: SandboxPolicy,
}

fn quality_case(task: &SuiteTask) -> ValidationCase {
    let input = match (&task.check, &task.matcher) {
        (Some(cmd), _) => cmd.clone(),
        (None, Matcher::ExactText { .. }) => format!("cat {}", shell_quote(&task.output_path)),
        (None, _) => String::new(),
    };
    ValidationCase {
        id: task.task_id.clone(),
        input,
        expected: task.matcher.clone(),
        provenance: Provenance::RepoTestSuite,
        gates: None,
    }
}

fn run_task(task: &SuiteTask, agent: &Agent) -> (TaskResult, Option<String>) {
    let skill = match &task.skill {
        Some(s) => s.clone(),
        None => {
            let remote = [RemoteAgent {
                endpoint: agent.service.card().endpoint.clone(),
                card: agent.service.card().clone(),
            }];
            match fallback_plan(&task.query, &remote, &task.input).steps.first() {
                Some(step) => step.skill.clone(),
                None => return (TaskResult::FailedExecution, Some("no skill matches the query".into())),
            }
        }
    };
    let resp = agent.service.handle(&A2ARequest {
        task_id: task.task_id.clone(),
        skill_id: skill,
        input: task.input.clone(),
        context: Some(task.query.clone()),
    });
    if resp.status != ResponseStatus::Completed {
        return (TaskResult::FailedExecution, resp.diagnostic);
    }
    let produced = agent.policy.resolve(&task.output_path).is_ok_and(|p| nonempty(&p));
    if !produced {
        return (
            TaskResult::FailedExecution,
            Some(format!("{} is missing or empty", task.output_path)),
        );
    }
    let result = evaluate_case(&quality_case(task), &agent.policy);
    match result.outcome {
        CaseOutcome::Pass => (TaskResult::Passed, None),
        CaseOutcome::Fail => (TaskResult::FailedQuality, Some(result.transcript)),
    }
}

/// Run every task of the suite at `path`, serially.
pub fn run_suite(path: &Path, opts: &BenchOptions) -> Result<BenchRun> {
    let suite = Suite::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let workdir = match &opts.workdir {
        Some(w) => w.clone(),
        None => tempfile_dir()?,
    };
    let mut agents: BTreeMap<String, std::result::Result<Agent, String>> = BTreeMap::new();
    let mut ledger = UsageLedger::default();
    let mut workspaces = BTreeMap::new();
    let mut records = Vec::new();
    for task in &suite.tasks {
        let mut tokens = TokenUsage::default();
        if !agents.contains_key(&task.repo) {
            let dir = workdir.join(format!("{}-{}", slug(&task.repo), agents.len()));
            let mut a = opts.agentize.clone();
            a.workspace = Some(dir.clone());
            let built = agentize(&base.join(&task.repo), &a).and_then(|r| {
                ledger.record(r.usage.total, &task.repo);
                tokens = r.usage.total;
                let ws = r.workspace.clone();
                let service = Service::open(ws.clone(), a.engine.exec_timeout)?;
                let policy = SandboxPolicy::new(ws.root(), a.engine.exec_timeout, Network::Denied)
                    .map_err(|e| Error::io(ws.root(), e))?;
                Ok(Agent { service, policy })
            });
            workspaces.insert(task.repo.clone(), dir);
            agents.insert(task.repo.clone(), built.map_err(|e| e.to_string()));
        }
        let (result, diagnostic) = match &agents[&task.repo] {
            Ok(agent) => run_task(task, agent),
            Err(e) => (TaskResult::FailedExecution, Some(format!("agentization failed: {e}"))),
        };
        records.push(TaskRecord {
            task_id: task.task_id.clone(),
            repo: task.repo.clone(),
            query: task.query.clone(),
            expected: task.matcher.clone(),
            result,
            tokens,
            diagnostic,
        });
    }
    let report = BenchReport::from_tasks(records).map_err(|e| Error::MalformedSuite(e.to_string()))?;
    Ok(BenchRun {
        report,
        ledger,
        workspaces,
    })
}

fn tempfile_dir() -> Result<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or_default();
    let dir = std::env::temp_dir().join(format!("agentizer-bench-{}-{nanos}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn kilo(n: u64) -> String {
    format!("{:.2}k", n as f64 / 1000.0)
}

/// Human-readable table; input tokens are shown in thousands.
pub fn render_table(report: &BenchReport) -> String {
    let mut out = String::new();
    let w = report.tasks.iter().map(|t| t.task_id.len()).max().unwrap_or(4).max(4);
    let _ = writeln!(out, "{:<w$}  {:<17}  {:>10}  {:>8}", "task", "result", "input", "output");
    for t in &report.tasks {
        let result = serde_json::to_value(t.result).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        let _ = writeln!(out, "{:<w$}  {:<17}  {:>10}  {:>8}", t.task_id, result, kilo(t.tokens.input), t.tokens.output);
    }
    let _ = writeln!(
        out,
        "ECR {}%  TPR {}%  tokens input {} output {}",
        report.ecr,
        report.tpr,
        kilo(report.total_tokens.input),
        report.total_tokens.output
    );
    out
}
