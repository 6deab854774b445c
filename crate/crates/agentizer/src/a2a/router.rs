//! The router: picks skills across several agents for a task and runs them
//! in order, feeding outputs of earlier steps into later ones.
//!
//! Path outputs travel between agents as artifact URLs; the receiving
//! service fetches them into its own workspace.

use std::collections::BTreeMap;

use agentizer_core::a2a::{
    A2ARequest, A2AResponse, AgentCard, ArtifactRef, Binding, ResponseStatus, RouteError, RouteStep, RouterPlan,
    ARTIFACTS_PATH,
};
use agentizer_core::planner::{Planner, PlannerError, PlannerRequest, RequestKind, TokenUsage};
use agentizer_core::rank::tokenize;
use agentizer_core::{Context, ContextItem, ContextKind, Goal, GoalOrigin};
use serde_json::Value;

use super::Client;

/// A reachable agent: where it listens and what it offers.
#[derive(Debug, Clone)]
pub struct RemoteAgent {
    pub endpoint: String,
    pub card: AgentCard,
}

#[derive(Debug, Clone)]
pub struct RouteOutcome {
    pub plan: RouterPlan,
    /// One response per executed step.
    pub steps: Vec<A2AResponse>,
    /// The last step's response with every step's artifacts and the summed
    /// usage.
    pub response: A2AResponse,
}

fn cards(agents: &[RemoteAgent]) -> Vec<AgentCard> {
    agents.iter().map(|a| a.card.clone()).collect()
}

/// Skills whose name's leading word appears in the task, in order of
/// appearance, chained by matching field names.
pub fn fallback_plan(task: &str, agents: &[RemoteAgent], input: &Value) -> RouterPlan {
    let words = tokenize(task);
    let mut picks: Vec<(usize, &str, &agentizer_core::a2a::AgentSkill)> = Vec::new();
    for a in agents {
        for s in &a.card.skills {
            let Some(verb) = tokenize(&s.name).into_iter().next() else { continue };
            if let Some(pos) = words.iter().position(|w| *w == verb) {
                if !picks.iter().any(|(p, _, _)| *p == pos) {
                    picks.push((pos, &a.card.agent_name, s));
                }
            }
        }
    }
    picks.sort_by_key(|(p, _, _)| *p);
    let mut steps: Vec<RouteStep> = Vec::new();
    for (i, (_, agent, skill)) in picks.iter().enumerate() {
        let mut inputs = BTreeMap::new();
        for (name, field) in &skill.input_schema {
            let from_step = (0..i).rev().find_map(|j| {
                let prev = picks[j].2;
                let out = if prev.output_schema.contains_key(name) {
                    Some(name.clone())
                } else {
                    // A lone output of the same type feeds a lone input of that type.
                    let same: Vec<&String> = prev.output_schema.iter().filter(|(_, f)| f.ty == field.ty).map(|(n, _)| n).collect();
                    (same.len() == 1 && field.required).then(|| same[0].clone())
                };
                out.map(|field| Binding::Step { step: j, field })
            });
            match (from_step, input.get(name)) {
                (_, Some(v)) if i == 0 => {
                    inputs.insert(name.clone(), Binding::Literal { value: v.clone() });
                }
                (Some(b), _) => {
                    inputs.insert(name.clone(), b);
                }
                (None, Some(v)) => {
                    inputs.insert(name.clone(), Binding::Literal { value: v.clone() });
                }
                (None, None) => {}
            }
        }
        steps.push(RouteStep {
            agent: agent.to_string(),
            skill: skill.id.clone(),
            inputs,
        });
    }
    RouterPlan { steps }
}

/// Ask the planner for a plan; fall back to name matching when it has none.
pub fn plan_route(
    task: &str,
    agents: &[RemoteAgent],
    planner: Option<&dyn Planner>,
    input: &Value,
) -> Result<(RouterPlan, TokenUsage), RouteError> {
    if agents.is_empty() {
        return Err(RouteError::NoApplicableSkill);
    }
    let mut usage = TokenUsage::default();
    let mut plan = None;
    if let Some(planner) = planner {
        let mut context = Context::new();
        for a in agents {
            for s in &a.card.skills {
                let payload = format!(
                    "agent {} skill {}: {} inputs={} outputs={}",
                    a.card.agent_name,
                    s.id,
                    s.description,
                    serde_json::to_string(&s.input_schema).unwrap_or_default(),
                    serde_json::to_string(&s.output_schema).unwrap_or_default()
                );
                context.extend(ContextItem::new(ContextKind::DocSlice, payload));
            }
        }
        if input.as_object().is_some_and(|o| !o.is_empty()) {
            context.extend(ContextItem::new(ContextKind::Configuration, format!("task input: {input}")));
        }
        let goal = Goal::new("route", task, GoalOrigin::Knowledge).map_err(|_| RouteError::NoApplicableSkill)?;
        let request = PlannerRequest {
            kind: RequestKind::PlanRoute,
            goal,
            context,
            repo_summary: String::new(),
        };
        match planner.respond(&request) {
            Ok(resp) => {
                usage += resp.usage;
                plan = resp.route.filter(|r| !r.is_empty()).map(|steps| RouterPlan { steps });
            }
            Err(PlannerError::NoPlan { .. }) => {}
            Err(e) => {
                return Err(RouteError::Invalid {
                    step: 0,
                    reason: format!("planner failed: {e}"),
                })
            }
        }
    }
    let plan = plan.unwrap_or_else(|| fallback_plan(task, agents, input));
    plan.check(&cards(agents))?;
    Ok((plan, usage))
}

fn artifact_url(endpoint: &str, token: &str) -> String {
    format!("{}{ARTIFACTS_PATH}{token}", endpoint.trim_end_matches('/'))
}

/// Run a checked plan step by step. The first unsuccessful step ends the
/// run; later steps are never sent.
pub fn execute_plan(
    plan: &RouterPlan,
    agents: &[RemoteAgent],
    client: &Client,
    run_id: &str,
    task: &str,
) -> Result<(Vec<A2AResponse>, A2AResponse), RouteError> {
    let mut bound: Vec<Value> = Vec::new();
    let mut responses: Vec<A2AResponse> = Vec::new();
    let mut artifacts = Vec::new();
    let mut usage = TokenUsage::default();
    for (i, step) in plan.steps.iter().enumerate() {
        let input = plan.resolve_input(i, &bound)?;
        let agent = agents
            .iter()
            .find(|a| a.card.agent_name == step.agent)
            .ok_or_else(|| RouteError::Invalid {
                step: i,
                reason: format!("unknown agent {}", step.agent),
            })?;
        let req = A2ARequest {
            task_id: format!("{run_id}-{i}"),
            skill_id: step.skill.clone(),
            input,
            context: Some(task.to_string()),
        };
        let resp = client.send_task(&agent.endpoint, &req).map_err(|e| RouteError::DownstreamFailure {
            step: i,
            diagnostic: e.to_string(),
        })?;
        if resp.status != ResponseStatus::Completed {
            return Err(RouteError::DownstreamFailure {
                step: i,
                diagnostic: resp.diagnostic.unwrap_or_else(|| format!("{:?}", resp.status)),
            });
        }
        usage += resp.usage;
        let mut view = resp.output.clone().unwrap_or(Value::Null);
        for a in &resp.artifacts {
            let url = artifact_url(&agent.endpoint, &a.token);
            if let Some(obj) = view.as_object_mut() {
                obj.insert(a.name.clone(), Value::String(url.clone()));
            }
            artifacts.push(ArtifactRef {
                token: url,
                name: format!("{}/{}", step.skill, a.name),
            });
        }
        bound.push(view);
        responses.push(resp);
    }
    let last = responses.last().cloned().ok_or(RouteError::NoApplicableSkill)?;
    let response = A2AResponse {
        task_id: run_id.to_string(),
        artifacts,
        usage,
        ..last
    };
    Ok((responses, response))
}

/// Plan and run `task` over `agents`.
pub fn route(
    task: &str,
    agents: &[RemoteAgent],
    planner: Option<&dyn Planner>,
    input: &Value,
    client: &Client,
    run_id: &str,
) -> Result<RouteOutcome, RouteError> {
    let (plan, planner_usage) = plan_route(task, agents, planner, input)?;
    let (steps, mut response) = execute_plan(&plan, agents, client, run_id, task)?;
    response.usage += planner_usage;
    Ok(RouteOutcome { plan, steps, response })
}
