//! Planner backed by an OpenAI-compatible `/chat/completions` endpoint.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use agentizer_core::planner::{Planner, PlannerError, PlannerRequest, PlannerResponse, RequestKind, TokenUsage};
use serde_json::{json, Value};

use crate::{Error, Result};

pub const ENDPOINT_VAR: &str = "AGENTIZER_LLM_ENDPOINT";
pub const MODEL_VAR: &str = "AGENTIZER_LLM_MODEL";
pub const API_KEY_VAR: &str = "AGENTIZER_LLM_API_KEY";

/// Malformed replies tolerated per request before giving up.
pub const MALFORMED_RETRIES: u32 = 3;

/// Context items sent with a request, newest kept.
const CONTEXT_ITEMS: usize = 40;
const ITEM_BYTES: usize = 2000;

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// Base URL, e.g. `http://localhost:8000/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub max_concurrent: usize,
    pub timeout: Duration,
}

impl LlmConfig {
    pub fn from_env() -> Result<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .map_err(|_| Error::Precondition(format!("the llm planner needs {ENDPOINT_VAR}")))?;
        Ok(Self {
            endpoint,
            model: std::env::var(MODEL_VAR).unwrap_or_else(|_| "default".into()),
            api_key: std::env::var(API_KEY_VAR).ok(),
            max_concurrent: 4,
            timeout: Duration::from_secs(120),
        })
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.free.lock().expect("semaphore");
        while *n == 0 {
            n = self.cv.wait(n).expect("semaphore");
        }
        *n -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore") += 1;
        self.0.cv.notify_one();
    }
}

pub struct LlmPlanner {
    config: LlmConfig,
    agent: ureq::Agent,
    slots: Semaphore,
}

fn shape(kind: RequestKind) -> &'static str {
    match kind {
        RequestKind::SynthesizeOperation => {
            r#"{"operation": {"tool": "<tool name>", "arguments": {...}, "rationale": "<why>"}}"#
        }
        RequestKind::DeriveFollowups => {
            r#"{"followups": [{"text": "<sub-goal>", "after": ["<text of a sibling that must finish first>"], "check": {"kind": "artifact-exists|command|goal-completed", "arg": "<path or command>"}}]}  (an empty list means the goal is atomic)"#
        }
        RequestKind::GenerateValidation => {
            r#"{"validation-cases": [{"id": "<id>", "input": "<shell command>", "expected": {"kind": "exact-text|file-exists-nonempty|exit-code|digest", ...}, "provenance": "synthesized"}]}"#
        }
        RequestKind::ExtractSkills => {
            r#"{"skills": [{"capability": "<capability id>", "name": "<name>", "description": "<text>", "invocation": "<shell template with {field} placeholders>", "output-schema": {}, "outputs": {}}]}"#
        }
        RequestKind::AnswerUsage => r#"{"answer": "<how to use the capability, with a command>"}"#,
        RequestKind::PlanRoute => {
            r#"{"route": [{"agent": "<agent name>", "skill": "<skill id>", "inputs": {"<field>": {"from": "literal", "value": ...} | {"from": "step", "step": 0, "field": "<output field>"}}}]}"#
        }
    }
}

fn clip(s: &str, n: usize) -> &str {
    if s.len() <= n {
        return s;
    }
    let mut cut = n;
    while !s.is_char_boundary(cut) {
        cut -= 1;
    }
    &s[..cut]
}

/// Pull the first JSON object out of a reply, tolerating code fences.
pub fn extract_json(reply: &str) -> Option<Value> {
    let t = reply.trim();
    if let Ok(v) = serde_json::from_str::<Value>(t) {
        return Some(v);
    }
    let start = t.find('{')?;
    let end = t.rfind('}')?;
    serde_json::from_str(&t[start..=end]).ok()
}

impl LlmPlanner {
    pub fn new(config: LlmConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let slots = Semaphore {
            free: Mutex::new(config.max_concurrent.max(1)),
            cv: Condvar::new(),
        };
        Self { config, agent, slots }
    }

    fn messages(&self, req: &PlannerRequest) -> Vec<Value> {
        let system = format!(
            "You plan the setup of a code repository so it can run as an agent. \
             Request kind: {}. Reply with a single JSON object of the form {} and nothing else.",
            req.kind.as_str(),
            shape(req.kind)
        );
        let mut user = format!("Goal: {}\n\nRepository:\n{}\n", req.goal.text, req.repo_summary);
        let items = req.context.items();
        let skip = items.len().saturating_sub(CONTEXT_ITEMS);
        if !items.is_empty() {
            user.push_str("\nContext so far:\n");
        }
        for item in &items[skip..] {
            user.push_str(&format!("[{}] {}\n", item.kind.as_str(), clip(&item.payload, ITEM_BYTES)));
        }
        vec![json!({"role": "system", "content": system}), json!({"role": "user", "content": user})]
    }

    fn call(&self, messages: &[Value]) -> std::result::Result<(String, TokenUsage), PlannerError> {
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let body = json!({"model": self.config.model, "messages": messages, "temperature": 0});
        let mut req = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(body.to_string())
            .map_err(|e| PlannerError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| PlannerError::Transport(e.to_string()))?;
        if status != 200 {
            return Err(PlannerError::Transport(format!("HTTP {status}: {}", clip(&text, 500))));
        }
        let v: Value = serde_json::from_str(&text).map_err(|e| PlannerError::Transport(e.to_string()))?;
        let content = v["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| PlannerError::Transport("reply has no choices[0].message.content".into()))?
            .to_string();
        let usage = TokenUsage::new(
            v["usage"]["prompt_tokens"].as_u64().unwrap_or(0),
            v["usage"]["completion_tokens"].as_u64().unwrap_or(0),
        );
        Ok((content, usage))
    }
}

impl Planner for LlmPlanner {
    fn respond(&self, request: &PlannerRequest) -> std::result::Result<PlannerResponse, PlannerError> {
        let _permit = self.slots.acquire();
        let mut messages = self.messages(request);
        let mut spent = TokenUsage::default();
        let mut last = String::new();
        for _ in 0..=MALFORMED_RETRIES {
            let (content, usage) = self.call(&messages)?;
            spent += usage;
            let parsed = extract_json(&content)
                .ok_or_else(|| "reply is not JSON".to_string())
                .and_then(|v| {
                    serde_json::from_value::<PlannerResponse>(v.clone())
                        .map_err(|e| e.to_string())
                        .map(|r| (r, v))
                })
                .and_then(|(r, v)| r.validate_for(request.kind).map(|_| (r, v)));
            match parsed {
                Ok((mut r, v)) => {
                    r.usage = spent;
                    r.raw = Some(v);
                    return Ok(r);
                }
                Err(e) => {
                    last = e;
                    messages.push(json!({"role": "assistant", "content": content}));
                    messages.push(json!({"role": "user", "content": format!(
                        "That reply was not usable ({last}). Answer again with only the JSON object."
                    )}));
                }
            }
        }
        Err(PlannerError::Malformed(last))
    }

    fn name(&self) -> &str {
        "llm"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use agentizer_core::{Context, Goal, GoalOrigin};

    fn mock(replies: Vec<&'static str>) -> (String, std::thread::JoinHandle<usize>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", server.server_addr().to_ip().unwrap());
        let h = std::thread::spawn(move || {
            let mut served = 0;
            for reply in replies {
                let req = server.recv().unwrap();
                let body = json!({
                    "choices": [{"message": {"role": "assistant", "content": reply}}],
                    "usage": {"prompt_tokens": 10, "completion_tokens": 5}
                });
                req.respond(tiny_http::Response::from_string(body.to_string())).unwrap();
                served += 1;
            }
            served
        });
        (url, h)
    }

    fn planner(url: String) -> LlmPlanner {
        LlmPlanner::new(LlmConfig {
            endpoint: url,
            model: "m".into(),
            api_key: None,
            max_concurrent: 2,
            timeout: Duration::from_secs(5),
        })
    }

    fn request() -> PlannerRequest {
        PlannerRequest {
            kind: RequestKind::SynthesizeOperation,
            goal: Goal::new("g", "write config", GoalOrigin::TodoDerived).unwrap(),
            context: Context::new(),
            repo_summary: "files".into(),
        }
    }

    #[test]
    fn retries_malformed_replies_and_sums_usage() {
        let (url, h) = mock(vec!["sure!", "```json\n{\"operation\":{\"tool\":\"think\",\"arguments\":{\"thought\":\"ok\"}}}\n```"]);
        let r = planner(url).respond(&request()).unwrap();
        assert_eq!(r.operation.unwrap().tool, "think");
        assert_eq!(r.usage, TokenUsage::new(20, 10));
        assert_eq!(h.join().unwrap(), 2);
    }

    #[test]
    fn gives_up_after_bounded_retries() {
        let (url, h) = mock(vec!["no"; 1 + MALFORMED_RETRIES as usize]);
        let err = planner(url).respond(&request()).unwrap_err();
        assert!(matches!(err, PlannerError::Malformed(_)));
        assert_eq!(h.join().unwrap(), 4);
    }
}
