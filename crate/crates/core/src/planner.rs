//! Planner contract: request/response types, the backend trait, token
//! accounting, and the scripted plan used as a deterministic backend.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::a2a::{RouteStep, SkillDraft};
use crate::context::Context;
use crate::id::IdGen;
use crate::node::{Goal, GoalOrigin, Operation};
use crate::todo::CompletionCheck;
use crate::validation::ValidationCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RequestKind {
    SynthesizeOperation,
    DeriveFollowups,
    GenerateValidation,
    ExtractSkills,
    AnswerUsage,
    PlanRoute,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::SynthesizeOperation => "synthesize-operation",
            RequestKind::DeriveFollowups => "derive-followups",
            RequestKind::GenerateValidation => "generate-validation",
            RequestKind::ExtractSkills => "extract-skills",
            RequestKind::AnswerUsage => "answer-usage",
            RequestKind::PlanRoute => "plan-route",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlannerRequest {
    pub kind: RequestKind,
    pub goal: Goal,
    pub context: Context,
    #[serde(default)]
    pub repo_summary: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TokenUsage {
    pub input: u64,
    pub output: u64,
}

impl TokenUsage {
    pub fn new(input: u64, output: u64) -> Self {
        Self { input, output }
    }
}

impl core::ops::AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: Self) {
        self.input += rhs.input;
        self.output += rhs.output;
    }
}

/// A follow-up goal as proposed by a planner, before it is given an id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "FollowupRepr")]
#[serde(rename_all = "kebab-case")]
pub struct FollowupDraft {
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CompletionCheck>,
    /// Texts of sibling or existing goals that must be done first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub after: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub demands: BTreeMap<String, u32>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FollowupRepr {
    Text(String),
    Full {
        text: String,
        #[serde(default)]
        inputs: Vec<String>,
        #[serde(default)]
        check: Option<CompletionCheck>,
        #[serde(default)]
        after: Vec<String>,
        #[serde(default)]
        demands: BTreeMap<String, u32>,
    },
}

impl From<FollowupRepr> for FollowupDraft {
    fn from(r: FollowupRepr) -> Self {
        match r {
            FollowupRepr::Text(text) => FollowupDraft::text(text),
            FollowupRepr::Full {
                text,
                inputs,
                check,
                after,
                demands,
            } => FollowupDraft {
                text,
                inputs,
                check,
                after,
                demands,
            },
        }
    }
}

impl FollowupDraft {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            inputs: Vec::new(),
            check: None,
            after: Vec::new(),
            demands: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlannerResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operation: Option<Operation>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub followups: Vec<FollowupDraft>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_cases: Vec<ValidationCase>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skills: Vec<SkillDraft>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<RouteStep>>,
    #[serde(default)]
    pub usage: TokenUsage,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<Value>,
}

impl PlannerResponse {
    /// Check that the fields required by `kind` are present.
    pub fn validate_for(&self, kind: RequestKind) -> Result<(), String> {
        let ok = match kind {
            RequestKind::SynthesizeOperation => self.operation.is_some(),
            RequestKind::AnswerUsage => self.answer.as_deref().is_some_and(|a| !a.is_empty()),
            RequestKind::PlanRoute => self.route.as_ref().is_some_and(|r| !r.is_empty()),
            // An empty list is a meaningful reply for these kinds.
            RequestKind::DeriveFollowups
            | RequestKind::GenerateValidation
            | RequestKind::ExtractSkills => true,
        };
        if !ok {
            return Err(format!("response lacks the fields required for {}", kind.as_str()));
        }
        if let Some(op) = &self.operation {
            if op.tool.is_empty() {
                return Err("operation names no tool".into());
            }
        }
        if self.followups.iter().any(|f| f.text.trim().is_empty()) {
            return Err("empty follow-up goal".into());
        }
        for case in &self.validation_cases {
            case.check()?;
        }
        Ok(())
    }

    /// Follow-ups deduplicated by text, first occurrence kept.
    pub fn unique_followups(&self) -> Vec<FollowupDraft> {
        let mut seen = BTreeSet::new();
        self.followups
            .iter()
            .filter(|f| seen.insert(f.text.trim().to_string()))
            .cloned()
            .collect()
    }
}

/// Turn planner drafts into goals with deterministic ids.
pub fn goals_from_drafts(ids: &IdGen, parent: &Goal, drafts: &[FollowupDraft]) -> Vec<Goal> {
    drafts
        .iter()
        .enumerate()
        .map(|(i, d)| Goal {
            id: ids.goal(&parent.id, i as u64),
            text: d.text.trim().to_string(),
            origin: GoalOrigin::TodoDerived,
            inputs: d.inputs.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlannerError {
    #[error("no plan for {kind} on goal {goal:?}")]
    NoPlan { kind: &'static str, goal: String },
    #[error("planner transport failure: {0}")]
    Transport(String),
    #[error("malformed planner reply: {0}")]
    Malformed(String),
}

/// A planner backend. Implementations must tolerate concurrent calls.
pub trait Planner: Send + Sync {
    fn respond(&self, request: &PlannerRequest) -> Result<PlannerResponse, PlannerError>;

    fn name(&self) -> &str;
}

/// Running token totals with per-node attribution.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct UsageLedger {
    pub total: TokenUsage,
    pub per_node: BTreeMap<String, TokenUsage>,
}

impl UsageLedger {
    pub fn record(&mut self, usage: TokenUsage, attribution: &str) {
        self.total += usage;
        *self.per_node.entry(attribution.into()).or_default() += usage;
    }

    pub fn record_response(&mut self, resp: &PlannerResponse, attribution: &str) {
        self.record(resp.usage, attribution);
    }

    /// Totals equal the sum of attributions.
    pub fn consistent(&self) -> bool {
        let mut sum = TokenUsage::default();
        for u in self.per_node.values() {
            sum += *u;
        }
        sum == self.total
    }
}

/// Goal-text pattern: a literal (case-insensitive, trimmed) or a prefix
/// ending in `*`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Literal(String),
    Prefix(String),
}

impl Pattern {
    pub fn parse(raw: &str) -> Self {
        let norm = normalize(raw);
        match norm.strip_suffix('*') {
            Some(prefix) => Pattern::Prefix(String::from(prefix.trim_end())),
            None => Pattern::Literal(norm),
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        let t = normalize(text);
        match self {
            Pattern::Literal(l) => *l == t,
            Pattern::Prefix(p) => t.starts_with(p.as_str()),
        }
    }

    /// Whether some goal text matches both patterns.
    pub fn overlaps(&self, other: &Pattern) -> bool {
        match (self, other) {
            (Pattern::Literal(a), Pattern::Literal(b)) => a == b,
            (Pattern::Literal(l), Pattern::Prefix(p)) | (Pattern::Prefix(p), Pattern::Literal(l)) => {
                l.starts_with(p.as_str())
            }
            (Pattern::Prefix(a), Pattern::Prefix(b)) => a.starts_with(b.as_str()) || b.starts_with(a.as_str()),
        }
    }
}

fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(&word.to_lowercase());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PlanEntry {
    pub pattern: String,
    pub kind: RequestKind,
    pub response: PlannerResponse,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("plan entries {first} and {second} ({kind}) can match the same goal")]
    Overlap {
        kind: &'static str,
        first: usize,
        second: usize,
    },
    #[error("plan entry {index} is invalid: {reason}")]
    Invalid { index: usize, reason: String },
}

/// Goal-pattern → response table. Patterns of the same kind are disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedPlan {
    entries: Vec<(Pattern, PlanEntry)>,
}

impl ScriptedPlan {
    pub fn new(entries: Vec<PlanEntry>) -> Result<Self, PlanError> {
        let parsed: Vec<(Pattern, PlanEntry)> = entries
            .into_iter()
            .map(|e| (Pattern::parse(&e.pattern), e))
            .collect();
        for (i, (p, e)) in parsed.iter().enumerate() {
            if e.pattern.trim().is_empty() {
                return Err(PlanError::Invalid {
                    index: i,
                    reason: "empty pattern".into(),
                });
            }
            e.response
                .validate_for(e.kind)
                .map_err(|reason| PlanError::Invalid { index: i, reason })?;
            for (j, (q, f)) in parsed.iter().enumerate().skip(i + 1) {
                if e.kind == f.kind && p.overlaps(q) {
                    return Err(PlanError::Overlap {
                        kind: e.kind.as_str(),
                        first: i,
                        second: j,
                    });
                }
            }
        }
        Ok(Self { entries: parsed })
    }

    pub fn entries(&self) -> impl Iterator<Item = &PlanEntry> {
        self.entries.iter().map(|(_, e)| e)
    }

    pub fn lookup(&self, kind: RequestKind, goal_text: &str) -> Option<&PlannerResponse> {
        self.entries
            .iter()
            .find(|(p, e)| e.kind == kind && p.matches(goal_text))
            .map(|(_, e)| &e.response)
    }
}
