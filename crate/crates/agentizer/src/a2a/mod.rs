//! Communication layer of a finished repository agent: skill extraction,
//! the agent card, the task service, a client and the router.

use std::path::Path;

use agentizer_core::a2a::{
    placeholders, skills_from_drafts, AgentCard, AgentSkill, FieldSchema, FieldType, OutputSource, SkillDraft,
    PROTOCOL_VERSION,
};
use agentizer_core::knowledge::{CodeKnowledgeGraph, EntityKind, UsageKb};
use agentizer_core::planner::{PlannerError, RequestKind};
use agentizer_core::{Context, ContextItem, ContextKind, Goal, GoalOrigin};

use crate::engine::Engine;
use crate::workspace::{write_atomic, to_document, Workspace};
use crate::{Error, Result};

pub mod client;
pub mod router;
pub mod service;

pub use client::Client;
pub use router::{route, RouteOutcome};
pub use service::{serve, Service, ServiceHandle};

/// Goal text of the skill-extraction request.
pub const SKILLS_GOAL: &str = "Extract agent skills";

pub const DEFAULT_ENDPOINT: &str = "http://127.0.0.1:8080";

#[derive(Debug, Clone, Default)]
pub struct Extracted {
    pub skills: Vec<AgentSkill>,
    pub warnings: Vec<String>,
}

/// `<name>` placeholders of a README command become `{name}` fields.
pub fn template_from_command(command: &str) -> String {
    let mut out = String::new();
    let mut rest = command;
    while let Some(start) = rest.find('<') {
        let after = &rest[start + 1..];
        match after.find('>') {
            Some(end) if !after[..end].is_empty() && !after[..end].contains(char::is_whitespace) => {
                out.push_str(&rest[..start]);
                let field: String = after[..end]
                    .chars()
                    .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
                    .collect();
                out.push('{');
                out.push_str(&field);
                out.push('}');
                rest = &after[end + 1..];
            }
            _ => {
                out.push_str(&rest[..=start]);
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_output_field(name: &str) -> bool {
    name.split('-').any(|w| matches!(w, "out" | "output" | "dest" | "destination"))
}

/// Skills straight from the graph: one per capability with a documented
/// parameterized command.
pub fn fallback_drafts(ckg: &CodeKnowledgeGraph) -> (Vec<SkillDraft>, Vec<String>) {
    let mut drafts = Vec::new();
    let mut warnings = Vec::new();
    for cap in ckg.of_kind(EntityKind::Capability) {
        let template = ckg
            .capability_code(&cap.id)
            .into_iter()
            .filter_map(|e| e.command.as_deref())
            .filter_map(|c| c.lines().next())
            .map(template_from_command)
            .find(|t| !placeholders(t).is_empty());
        let Some(invocation) = template else {
            warnings.push(format!("{}: no parameterized command, no skill", cap.id));
            continue;
        };
        let fields = placeholders(&invocation);
        let mut output_schema = std::collections::BTreeMap::new();
        let mut outputs = std::collections::BTreeMap::new();
        for f in fields.iter().filter(|f| is_output_field(f)) {
            output_schema.insert(f.clone(), FieldSchema::required(FieldType::Path));
            outputs.insert(f.clone(), OutputSource::Input { field: f.clone() });
        }
        if outputs.is_empty() {
            output_schema.insert("stdout".to_string(), FieldSchema::required(FieldType::String));
            outputs.insert("stdout".to_string(), OutputSource::Stdout);
        }
        let mut input_schema = agentizer_core::a2a::schema_from_template(&invocation);
        for f in fields.iter().filter(|f| is_output_field(f)) {
            if let Some(s) = input_schema.get_mut(f) {
                s.ty = FieldType::Path;
            }
        }
        drafts.push(SkillDraft {
            capability: cap.id.clone(),
            name: cap.name.clone(),
            description: if cap.summary.is_empty() { cap.name.clone() } else { cap.summary.clone() },
            invocation,
            input_schema: Some(input_schema),
            output_schema,
            outputs,
        });
    }
    (drafts, warnings)
}

/// One skill per exposed capability. The planner proposes them; when it has
/// no answer the graph's documented commands are used.
pub fn extract_skills(engine: &Engine, ckg: &CodeKnowledgeGraph, kb: &UsageKb) -> Result<Extracted> {
    if !engine.env_state().is_finished() {
        return Err(Error::Precondition("skills are extracted only from a finished environment".into()));
    }
    let mut out = Extracted::default();
    if ckg.count(EntityKind::Capability) == 0 {
        out.warnings.push("no capabilities in the knowledge graph; no skills".into());
        return Ok(out);
    }
    let mut context = Context::new();
    for cap in ckg.of_kind(EntityKind::Capability) {
        let cmds: Vec<String> = ckg.capability_code(&cap.id).into_iter().filter_map(|e| e.command.clone()).collect();
        let payload = format!("{} {:?}: {}\ncommands: {}", cap.id, cap.name, cap.summary, cmds.join(" | "));
        context.extend(ContextItem::new(ContextKind::DocSlice, payload));
    }
    for t in &kb.tuples {
        context.extend(ContextItem::new(ContextKind::DocSlice, format!("{}: {}", t.query, t.answer)));
    }
    let goal = Goal::new(engine.ids().goal("skills", 0), SKILLS_GOAL, GoalOrigin::Knowledge).expect("non-empty");
    let drafts = match engine.ask(RequestKind::ExtractSkills, &goal, &context, "skills") {
        Ok(resp) if !resp.skills.is_empty() => resp.skills,
        Ok(_) | Err(PlannerError::NoPlan { .. }) => {
            let (d, w) = fallback_drafts(ckg);
            out.warnings.extend(w);
            d
        }
        Err(e) => {
            out.warnings.push(format!("planner failed ({e}); skills taken from documented commands"));
            let (d, w) = fallback_drafts(ckg);
            out.warnings.extend(w);
            d
        }
    };
    for skill in skills_from_drafts(&drafts) {
        match skill.check().and_then(|_| skill.check_backing(ckg)) {
            Ok(()) => out.skills.push(skill),
            Err(why) => out.warnings.push(format!("dropped skill: {why}")),
        }
    }
    Ok(out)
}

fn readme_description(root: &Path) -> String {
    let text = std::fs::read_to_string(root.join("README.md")).unwrap_or_default();
    text.lines()
        .map(str::trim)
        .skip_while(|l| l.is_empty() || l.starts_with('#'))
        .take_while(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Build, validate and write the card to the workspace.
pub fn emit_agent_card(ws: &Workspace, skills: Vec<AgentSkill>, repo: &str, endpoint: &str) -> Result<AgentCard> {
    let agent_name = repo.trim_end_matches("-repo").to_string();
    let card = AgentCard {
        agent_name: if agent_name.is_empty() { repo.to_string() } else { agent_name },
        repo: repo.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        description: readme_description(ws.root()),
        skills,
        endpoint: endpoint.to_string(),
        protocol_version: PROTOCOL_VERSION.to_string(),
    };
    card.validate().map_err(|e| Error::Other(format!("agent card: {e}")))?;
    write_atomic(&ws.agent_card(), to_document(&card).as_bytes())?;
    Ok(card)
}
