//! A2A wire types: skills, agent cards, task requests and responses, and
//! router plans.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::knowledge::{CodeKnowledgeGraph, EntityKind};
use crate::planner::TokenUsage;

pub const PROTOCOL_VERSION: &str = "agentizer-a2a/1";
pub const CARD_PATH: &str = "/.well-known/agent-card";
pub const TASKS_PATH: &str = "/tasks";
pub const ARTIFACTS_PATH: &str = "/artifacts/";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldType {
    String,
    /// A workspace-relative or absolute file path, carried as a string.
    Path,
    Integer,
    Number,
    Boolean,
}

impl FieldType {
    pub fn accepts(self, v: &Value) -> bool {
        match self {
            FieldType::String => v.is_string(),
            FieldType::Path => v.as_str().is_some_and(|s| !s.trim().is_empty()),
            FieldType::Integer => v.is_i64() || v.is_u64(),
            FieldType::Number => v.is_number(),
            FieldType::Boolean => v.is_boolean(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct FieldSchema {
    #[serde(rename = "type")]
    pub ty: FieldType,
    pub required: bool,
}

impl FieldSchema {
    pub fn required(ty: FieldType) -> Self {
        Self { ty, required: true }
    }
}

pub type Schema = BTreeMap<String, FieldSchema>;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SchemaError {
    #[error("input must be an object")]
    NotAnObject,
    #[error("missing required field {0:?}")]
    Missing(String),
    #[error("unknown field {0:?}")]
    Unknown(String),
    #[error("field {field:?} is not a {expected:?}")]
    WrongType { field: String, expected: FieldType },
}

/// Check `value` against `schema`. Unknown fields are rejected.
pub fn validate_value(schema: &Schema, value: &Value) -> Result<(), SchemaError> {
    let obj = value.as_object().ok_or(SchemaError::NotAnObject)?;
    for (name, field) in schema {
        match obj.get(name) {
            None | Some(Value::Null) if field.required => return Err(SchemaError::Missing(name.clone())),
            None | Some(Value::Null) => {}
            Some(v) if !field.ty.accepts(v) => {
                return Err(SchemaError::WrongType {
                    field: name.clone(),
                    expected: field.ty,
                })
            }
            Some(_) => {}
        }
    }
    if let Some(k) = obj.keys().find(|k| !schema.contains_key(*k)) {
        return Err(SchemaError::Unknown(k.clone()));
    }
    Ok(())
}

/// `{name}` placeholders in an invocation template, in order of first use.
pub fn placeholders(template: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        let after = &rest[start + 1..];
        let Some(end) = after.find('}') else { break };
        let name = &after[..end];
        if is_field_name(name) && !out.iter().any(|n| n == name) {
            out.push(name.to_string());
        }
        rest = &after[end + 1..];
    }
    out
}

fn is_field_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_')
}

/// POSIX single-quote escaping.
pub fn shell_quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        if c == '\'' {
            out.push_str("'\\''");
        } else {
            out.push(c);
        }
    }
    out.push('\'');
    out
}

fn scalar_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Substitute every placeholder with the shell-quoted input value. Absent
/// optional fields become an empty quoted string.
pub fn render_template(template: &str, input: &Value) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let after = &rest[start + 1..];
        match after.find('}') {
            Some(end) if is_field_name(&after[..end]) => {
                let v = input.get(&after[..end]).map(scalar_text).unwrap_or_default();
                out.push_str(&shell_quote(&v));
                rest = &after[end + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Field types guessed from placeholder names: anything mentioning a path,
/// file or dir is a path, everything else a string.
pub fn schema_from_template(template: &str) -> Schema {
    placeholders(template)
        .into_iter()
        .map(|name| {
            let lower = name.to_ascii_lowercase();
            let ty = if ["path", "file", "dir"].iter().any(|k| lower.contains(k)) {
                FieldType::Path
            } else {
                FieldType::String
            };
            (name, FieldSchema::required(ty))
        })
        .collect()
}

/// Where a skill's output field comes from after the invocation ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum OutputSource {
    /// Trimmed stdout of the invocation.
    Stdout,
    /// Echo of an input field, typically an output path the caller chose.
    Input { field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SkillBacking {
    /// CKG id of the capability the skill exposes.
    pub capability: String,
    /// Shell command with `{field}` placeholders.
    pub invocation: String,
    pub outputs: BTreeMap<String, OutputSource>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AgentSkill {
    pub id: String,
    pub name: String,
    pub description: String,
    pub input_schema: Schema,
    pub output_schema: Schema,
    pub backing: SkillBacking,
}

impl AgentSkill {
    pub fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("skill has an empty id".into());
        }
        if self.input_schema.is_empty() || self.output_schema.is_empty() {
            return Err(format!("skill {} has an empty schema", self.id));
        }
        for p in placeholders(&self.backing.invocation) {
            if !self.input_schema.contains_key(&p) {
                return Err(format!("skill {} template uses undeclared field {p}", self.id));
            }
        }
        for name in self.output_schema.keys() {
            match self.backing.outputs.get(name) {
                None => return Err(format!("skill {} has no source for output {name}", self.id)),
                Some(OutputSource::Input { field }) if !self.input_schema.contains_key(field) => {
                    return Err(format!("skill {} output {name} echoes unknown input {field}", self.id))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn check_backing(&self, ckg: &CodeKnowledgeGraph) -> Result<(), String> {
        match ckg.entity(&self.backing.capability) {
            Some(e) if e.kind == EntityKind::Capability => Ok(()),
            _ => Err(format!(
                "skill {} is backed by unknown capability {}",
                self.id, self.backing.capability
            )),
        }
    }

    /// Build the output object from the run's stdout and the request input.
    pub fn collect_output(&self, stdout: &str, input: &Value) -> Value {
        let mut map = serde_json::Map::new();
        for (name, source) in &self.backing.outputs {
            let v = match source {
                OutputSource::Stdout => Value::String(stdout.trim().to_string()),
                OutputSource::Input { field } => input.get(field).cloned().unwrap_or(Value::Null),
            };
            map.insert(name.clone(), v);
        }
        Value::Object(map)
    }
}

/// A skill as proposed by a planner, before it gets a unique id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SkillDraft {
    pub capability: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub invocation: String,
    /// Derived from the template when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_schema: Option<Schema>,
    pub output_schema: Schema,
    pub outputs: BTreeMap<String, OutputSource>,
}

pub fn slug(text: &str) -> String {
    let mut out = String::new();
    for c in text.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("skill");
    }
    out
}

/// Assign ids from name slugs; later duplicates get `-2`, `-3`, ...
pub fn skills_from_drafts(drafts: &[SkillDraft]) -> Vec<AgentSkill> {
    let mut used: BTreeSet<String> = BTreeSet::new();
    drafts
        .iter()
        .map(|d| {
            let base = slug(&d.name);
            let mut id = base.clone();
            let mut n = 2;
            while !used.insert(id.clone()) {
                id = format!("{base}-{n}");
                n += 1;
            }
            AgentSkill {
                id,
                name: d.name.clone(),
                description: d.description.clone(),
                input_schema: d
                    .input_schema
                    .clone()
                    .unwrap_or_else(|| schema_from_template(&d.invocation)),
                output_schema: d.output_schema.clone(),
                backing: SkillBacking {
                    capability: d.capability.clone(),
                    invocation: d.invocation.clone(),
                    outputs: d.outputs.clone(),
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct AgentCard {
    pub agent_name: String,
    pub repo: String,
    pub version: String,
    pub description: String,
    pub skills: Vec<AgentSkill>,
    pub endpoint: String,
    pub protocol_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CardError {
    #[error("an agent card needs at least one skill")]
    EmptySkills,
    #[error("malformed endpoint {0:?}")]
    BadEndpoint(String),
    #[error("duplicate skill id {0:?}")]
    DuplicateSkill(String),
    #[error("unsupported protocol version {0:?}")]
    Protocol(String),
    #[error("{0}")]
    Skill(String),
}

/// `http(s)://host[:port][/path]` with a non-empty host and a numeric port.
pub fn endpoint_well_formed(url: &str) -> bool {
    let Some(rest) = url.strip_prefix("http://").or_else(|| url.strip_prefix("https://")) else {
        return false;
    };
    let authority = rest.split('/').next().unwrap_or("");
    let (host, port) = match authority.rsplit_once(':') {
        Some((h, p)) => (h, Some(p)),
        None => (authority, None),
    };
    let host_ok = !host.is_empty()
        && host
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'.' || b == b'-');
    let port_ok = port.is_none_or(|p| !p.is_empty() && p.len() <= 5 && p.bytes().all(|b| b.is_ascii_digit()) && p.parse::<u32>().is_ok_and(|n| n <= 65535));
    host_ok && port_ok && !url.chars().any(char::is_whitespace)
}

impl AgentCard {
    pub fn validate(&self) -> Result<(), CardError> {
        if self.skills.is_empty() {
            return Err(CardError::EmptySkills);
        }
        if !endpoint_well_formed(&self.endpoint) {
            return Err(CardError::BadEndpoint(self.endpoint.clone()));
        }
        if self.protocol_version != PROTOCOL_VERSION {
            return Err(CardError::Protocol(self.protocol_version.clone()));
        }
        let mut seen = BTreeSet::new();
        for s in &self.skills {
            if !seen.insert(s.id.as_str()) {
                return Err(CardError::DuplicateSkill(s.id.clone()));
            }
            s.check().map_err(CardError::Skill)?;
        }
        Ok(())
    }

    pub fn skill(&self, id: &str) -> Option<&AgentSkill> {
        self.skills.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct A2ARequest {
    pub task_id: String,
    pub skill_id: String,
    pub input: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResponseStatus {
    Completed,
    Failed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ArtifactRef {
    pub token: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct A2AResponse {
    pub task_id: String,
    pub status: ResponseStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub artifacts: Vec<ArtifactRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default)]
    pub usage: TokenUsage,
}

impl A2AResponse {
    pub fn rejected(task_id: &str, why: impl Into<String>) -> Self {
        Self {
            task_id: task_id.into(),
            status: ResponseStatus::Rejected,
            output: None,
            artifacts: Vec::new(),
            diagnostic: Some(why.into()),
            usage: TokenUsage::default(),
        }
    }

    pub fn failed(task_id: &str, why: impl Into<String>) -> Self {
        Self {
            status: ResponseStatus::Failed,
            ..Self::rejected(task_id, why)
        }
    }

    pub fn check(&self, skill: &AgentSkill) -> Result<(), String> {
        match self.status {
            ResponseStatus::Completed => match &self.output {
                Some(o) => validate_value(&skill.output_schema, o).map_err(|e| e.to_string()),
                None => Err("completed response without output".into()),
            },
            _ if self.diagnostic.as_deref().is_none_or(str::is_empty) => {
                Err("unsuccessful response without diagnostic".into())
            }
            _ => Ok(()),
        }
    }
}

/// Source of one input field of a router step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "kebab-case")]
pub enum Binding {
    Literal { value: Value },
    /// Output field of an earlier step (0-based).
    Step { step: usize, field: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RouteStep {
    /// Agent name of the card that serves the skill.
    pub agent: String,
    pub skill: String,
    pub inputs: BTreeMap<String, Binding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RouterPlan {
    pub steps: Vec<RouteStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RouteError {
    #[error("no applicable skill for the task")]
    NoApplicableSkill,
    #[error("step {step} binds to step {source_step}, which does not precede it")]
    BindingOrder { step: usize, source_step: usize },
    #[error("step {step}: {reason}")]
    Invalid { step: usize, reason: String },
    #[error("step {step} failed: {diagnostic}")]
    DownstreamFailure { step: usize, diagnostic: String },
}

impl RouterPlan {
    /// Every binding source strictly precedes its sink, which makes the
    /// binding graph acyclic.
    pub fn check_order(&self) -> Result<(), RouteError> {
        if self.steps.is_empty() {
            return Err(RouteError::NoApplicableSkill);
        }
        for (i, step) in self.steps.iter().enumerate() {
            for b in step.inputs.values() {
                if let Binding::Step { step: src, .. } = b {
                    if *src >= i {
                        return Err(RouteError::BindingOrder {
                            step: i,
                            source_step: *src,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Full check against the cards the plan will run on.
    pub fn check(&self, cards: &[AgentCard]) -> Result<(), RouteError> {
        self.check_order()?;
        let skill_of = |step: &RouteStep| {
            cards
                .iter()
                .find(|c| c.agent_name == step.agent)
                .and_then(|c| c.skill(&step.skill))
        };
        for (i, step) in self.steps.iter().enumerate() {
            let invalid = |reason: String| RouteError::Invalid { step: i, reason };
            let skill = skill_of(step)
                .ok_or_else(|| invalid(format!("no skill {} on agent {}", step.skill, step.agent)))?;
            for (name, field) in &skill.input_schema {
                if field.required && !step.inputs.contains_key(name) {
                    return Err(invalid(format!("required input {name} is unbound")));
                }
            }
            for (name, b) in &step.inputs {
                let Some(field) = skill.input_schema.get(name) else {
                    return Err(invalid(format!("skill has no input {name}")));
                };
                match b {
                    Binding::Literal { value } if !field.ty.accepts(value) => {
                        return Err(invalid(format!("literal for {name} has the wrong type")))
                    }
                    Binding::Step { step: src, field: out } => {
                        let src_skill = skill_of(&self.steps[*src]).ok_or_else(|| {
                            invalid(format!("source step {src} names an unknown skill"))
                        })?;
                        if !src_skill.output_schema.contains_key(out) {
                            return Err(invalid(format!("step {src} has no output {out}")));
                        }
                    }
                    Binding::Literal { .. } => {}
                }
            }
        }
        Ok(())
    }

    /// Resolve a step's input from literals and earlier outputs.
    pub fn resolve_input(&self, step: usize, outputs: &[Value]) -> Result<Value, RouteError> {
        let mut map = serde_json::Map::new();
        for (name, b) in &self.steps[step].inputs {
            let v = match b {
                Binding::Literal { value } => value.clone(),
                Binding::Step { step: src, field } => outputs
                    .get(*src)
                    .and_then(|o| o.get(field))
                    .cloned()
                    .ok_or_else(|| RouteError::Invalid {
                        step,
                        reason: format!("output {field} of step {src} is unavailable"),
                    })?,
            };
            map.insert(name.clone(), v);
        }
        Ok(Value::Object(map))
    }
}
