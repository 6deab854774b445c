//! Whole-repository agentization: setup, knowledge, skills and card.

use std::path::{Path, PathBuf};

use agentizer_core::a2a::AgentCard;
use agentizer_core::knowledge::{CodeKnowledgeGraph, UsageKb};
use agentizer_core::planner::UsageLedger;
use agentizer_core::validation::GateReport;
use agentizer_core::Trajectory;

use crate::a2a::{emit_agent_card, extract_skills, DEFAULT_ENDPOINT};
use crate::engine::{Engine, EngineConfig, SetupOutcome};
use crate::knowledge::{build_ckg, build_usage_kb};
use crate::planner::{self, PlannerKind};
use crate::validation::evaluate_gate;
use crate::workspace::{read_doc, write_doc, Workspace};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AgentizeOptions {
    pub planner: PlannerKind,
    pub plan_file: Option<PathBuf>,
    /// Copy the repository here and work on the copy.
    pub workspace: Option<PathBuf>,
    pub engine: EngineConfig,
    pub endpoint: String,
}

impl Default for AgentizeOptions {
    fn default() -> Self {
        Self {
            planner: PlannerKind::Scripted,
            plan_file: None,
            workspace: None,
            engine: EngineConfig::default(),
            endpoint: DEFAULT_ENDPOINT.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AgentizeReport {
    pub workspace: Workspace,
    pub setup: SetupOutcome,
    /// Repository-level gate over the system tests.
    pub gate: GateReport,
    pub ckg: CodeKnowledgeGraph,
    pub kb: UsageKb,
    pub card: AgentCard,
    pub warnings: Vec<String>,
    pub usage: UsageLedger,
    pub steps: u32,
}

fn repo_name(repo: &Path) -> String {
    std::fs::canonicalize(repo)
        .ok()
        .and_then(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "repo".into())
}

pub fn load_history(ws: &Workspace) -> Result<Vec<Trajectory>> {
    ws.trajectory_ids()?.iter().map(|id| read_doc(&ws.trajectory(id))).collect()
}

/// Agentize `repo`. A workspace that finished before is only re-verified.
pub fn agentize(repo: &Path, opts: &AgentizeOptions) -> Result<AgentizeReport> {
    let ws = Workspace::prepare(repo, opts.workspace.as_deref())?;
    let planner = planner::build(opts.planner, ws.root(), opts.plan_file.as_deref())?;
    let engine = Engine::new(ws.clone(), planner, opts.engine.clone())?;
    let setup = engine.setup()?;

    if setup.reverified {
        if let (Ok(ckg), Ok(kb), Ok(card)) =
            (read_doc(&ws.ckg()), read_doc(&ws.usage_kb()), read_doc::<AgentCard>(&ws.agent_card()))
        {
            return Ok(AgentizeReport {
                gate: setup.gate.clone(),
                workspace: ws,
                setup,
                ckg,
                kb,
                card,
                warnings: Vec::new(),
                usage: engine.usage(),
                steps: engine.steps(),
            });
        }
    }

    let gate = if setup.reverified {
        setup.gate.clone()
    } else {
        evaluate_gate(&setup.system_tests, engine.policy(), engine.log().clock())
    };
    if !gate.passed {
        let failed: Vec<&str> = gate.failures().map(|f| f.case_id.as_str()).collect();
        return Err(Error::Other(format!("system tests failed after setup: {}", failed.join(", "))));
    }
    engine.finish(gate.passed)?;

    let mut warnings = Vec::new();
    let ckg = build_ckg(ws.root());
    if let Err(e) = ckg.check() {
        warnings.push(format!("knowledge graph: {e}"));
    }
    write_doc(&ws.ckg(), &ckg)?;
    let kb = build_usage_kb(&engine, &ckg, &load_history(&ws)?);
    warnings.extend(kb.warnings.iter().cloned());
    write_doc(&ws.usage_kb(), &kb)?;

    let extracted = extract_skills(&engine, &ckg, &kb)?;
    warnings.extend(extracted.warnings);
    let card = emit_agent_card(&ws, extracted.skills, &repo_name(repo), &opts.endpoint)?;
    engine.persist_state()?;
    Ok(AgentizeReport {
        workspace: ws,
        setup,
        gate,
        ckg,
        kb,
        card,
        warnings,
        usage: engine.usage(),
        steps: engine.steps(),
    })
}
