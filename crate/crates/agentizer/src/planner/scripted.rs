use std::path::Path;

use agentizer_core::planner::{
    PlanEntry, Planner, PlannerError, PlannerRequest, PlannerResponse, RequestKind, ScriptedPlan,
};
use serde::Deserialize;

use crate::{Error, Result};

#[derive(Deserialize)]
#[serde(untagged)]
enum PlanDoc {
    Wrapped { entries: Vec<PlanEntry> },
    Bare(Vec<PlanEntry>),
}

/// Answers from a fixed goal-pattern table. No model is consulted, so the
/// reported usage is whatever the entry declares (zero unless set).
pub struct ScriptedPlanner {
    plan: ScriptedPlan,
}

impl ScriptedPlanner {
    pub fn new(plan: ScriptedPlan) -> Self {
        Self { plan }
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        let doc: PlanDoc = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let entries = match doc {
            PlanDoc::Wrapped { entries } | PlanDoc::Bare(entries) => entries,
        };
        ScriptedPlan::new(entries).map(Self::new).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|message| Error::Parse {
            path: path.into(),
            message,
        })
    }

    pub fn plan(&self) -> &ScriptedPlan {
        &self.plan
    }
}

impl Planner for ScriptedPlanner {
    fn respond(&self, request: &PlannerRequest) -> std::result::Result<PlannerResponse, PlannerError> {
        let resp = match self.plan.lookup(request.kind, &request.goal.text) {
            Some(r) => r.clone(),
            // No entry means "nothing to add" for list-valued kinds.
            None if matches!(request.kind, RequestKind::DeriveFollowups | RequestKind::GenerateValidation) => {
                PlannerResponse::default()
            }
            None => {
                return Err(PlannerError::NoPlan {
                    kind: request.kind.as_str(),
                    goal: request.goal.text.clone(),
                })
            }
        };
        Ok(resp)
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentizer_core::planner::TokenUsage;
    use agentizer_core::{Context, Goal, GoalOrigin};

    fn req(kind: RequestKind, text: &str) -> PlannerRequest {
        PlannerRequest {
            kind,
            goal: Goal::new("g", text, GoalOrigin::RepoRoot).unwrap(),
            context: Context::new(),
            repo_summary: String::new(),
        }
    }

    #[test]
    fn missing_entries() {
        let p = ScriptedPlanner::from_json(
            r#"{"entries":[{"pattern":"run *","kind":"synthesize-operation","response":{"operation":{"tool":"think","arguments":{"thought":"x"}}}}]}"#,
        )
        .unwrap();
        assert!(p.respond(&req(RequestKind::SynthesizeOperation, "Run it")).unwrap().operation.is_some());
        assert!(p.respond(&req(RequestKind::DeriveFollowups, "x")).unwrap().followups.is_empty());
        assert!(matches!(
            p.respond(&req(RequestKind::SynthesizeOperation, "other")),
            Err(PlannerError::NoPlan { .. })
        ));
        let u = p.respond(&req(RequestKind::SynthesizeOperation, "Run it")).unwrap().usage;
        assert_eq!(u, TokenUsage::default());
    }

    #[test]
    fn overlapping_patterns_are_rejected() {
        let err = ScriptedPlanner::from_json(
            r#"[{"pattern":"run *","kind":"derive-followups","response":{}},{"pattern":"run smoke","kind":"derive-followups","response":{}}]"#,
        );
        assert!(err.is_err());
    }
}
