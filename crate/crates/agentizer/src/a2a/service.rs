//! The task service: serves the card, runs skills for requests, hands out
//! artifacts by token.
//!
//! Path inputs may be workspace paths or artifact URLs of another agent; the
//! latter are fetched into the inbox before the skill runs. Every request is
//! recorded in the service log, and an `exec` record is only ever written
//! after a `validation-pass` record for the same task.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use agentizer_core::a2a::{
    render_template, slug, validate_value, A2ARequest, A2AResponse, AgentCard, ArtifactRef, FieldType,
    ResponseStatus, ARTIFACTS_PATH, CARD_PATH, TASKS_PATH,
};
use agentizer_core::planner::TokenUsage;
use agentizer_core::EnvState;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::sandbox::{self, ExecRequest, Network, SandboxPolicy};
use crate::tools::{nonempty, PathLocks};
use crate::workspace::{read_doc, Workspace};
use crate::{Error, Result};

/// Largest request body accepted.
const MAX_BODY: u64 = 4 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ServiceRecord {
    pub seq: u64,
    pub task_id: String,
    pub event: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

pub struct Service {
    card: AgentCard,
    card_doc: String,
    ws: Workspace,
    policy: SandboxPolicy,
    locks: PathLocks,
    artifacts: Mutex<BTreeMap<String, PathBuf>>,
    seen: Mutex<BTreeSet<String>>,
    log: Mutex<(u64, fs::File)>,
    executions: AtomicU64,
    fetcher: ureq::Agent,
}

fn is_url(s: &str) -> bool {
    s.starts_with("http://") || s.starts_with("https://")
}

impl Service {
    /// Service over a finished workspace, using the card written there.
    pub fn open(ws: Workspace, exec_timeout: Duration) -> Result<Self> {
        let path = ws.agent_card();
        let card_doc = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let card: AgentCard = serde_json::from_str(&card_doc).map_err(|e| Error::Parse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        Self::with_card(ws, card, card_doc, exec_timeout)
    }

    fn with_card(ws: Workspace, card: AgentCard, card_doc: String, exec_timeout: Duration) -> Result<Self> {
        let env: EnvState = read_doc(&ws.env_state())
            .map_err(|_| Error::Precondition("workspace has no environment state; run agentize first".into()))?;
        if !env.is_finished() {
            return Err(Error::Precondition(format!(
                "environment is {:?}, not finished; refusing to serve",
                env.status
            )));
        }
        card.validate().map_err(|e| Error::Precondition(format!("invalid agent card: {e}")))?;
        let policy = SandboxPolicy::new(ws.root(), exec_timeout, Network::Denied).map_err(|e| Error::io(ws.root(), e))?;
        let log_path = ws.service_log();
        let log = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| Error::io(&log_path, e))?;
        let fetcher = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(60)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            card,
            card_doc,
            ws,
            policy,
            locks: PathLocks::default(),
            artifacts: Mutex::new(BTreeMap::new()),
            seen: Mutex::new(BTreeSet::new()),
            log: Mutex::new((0, log)),
            executions: AtomicU64::new(0),
            fetcher,
        })
    }

    pub fn card(&self) -> &AgentCard {
        &self.card
    }

    /// The card exactly as written to the workspace.
    pub fn card_document(&self) -> &str {
        &self.card_doc
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    /// Skill invocations started by this service.
    pub fn executions(&self) -> u64 {
        self.executions.load(Ordering::SeqCst)
    }

    pub fn artifact(&self, token: &str) -> Option<PathBuf> {
        self.artifacts.lock().expect("artifact table").get(token).cloned()
    }

    fn record(&self, task_id: &str, event: &str, detail: impl Into<String>) {
        let mut log = self.log.lock().expect("service log");
        log.0 += 1;
        let rec = ServiceRecord {
            seq: log.0,
            task_id: task_id.to_string(),
            event: event.to_string(),
            detail: detail.into(),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        let _ = log.1.write_all(line.as_bytes());
    }

    fn reject(&self, task_id: &str, why: String) -> A2AResponse {
        self.record(task_id, "rejected", why.clone());
        A2AResponse::rejected(task_id, why)
    }

    fn fail(&self, task_id: &str, why: String) -> A2AResponse {
        self.record(task_id, "failed", why.clone());
        A2AResponse::failed(task_id, why)
    }

    fn fetch_into_inbox(&self, task_id: &str, url: &str) -> std::result::Result<String, String> {
        let mut resp = self.fetcher.get(url).call().map_err(|e| format!("fetching {url}: {e}"))?;
        if resp.status().as_u16() != 200 {
            return Err(format!("fetching {url}: HTTP {}", resp.status().as_u16()));
        }
        let name = resp
            .headers()
            .get("X-Artifact-Name")
            .and_then(|v| v.to_str().ok())
            .and_then(|n| std::path::Path::new(n).file_name().map(|f| f.to_string_lossy().into_owned()))
            .unwrap_or_else(|| url.rsplit('/').next().unwrap_or("artifact").to_string());
        let dir = self.ws.inbox().join(slug(task_id));
        fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let dest = dir.join(&name);
        let mut bytes = Vec::new();
        resp.body_mut()
            .as_reader()
            .take(1 << 30)
            .read_to_end(&mut bytes)
            .map_err(|e| e.to_string())?;
        fs::write(&dest, bytes).map_err(|e| e.to_string())?;
        Ok(self.ws.relative(&dest))
    }

    /// Answer one task request.
    pub fn handle(&self, req: &A2ARequest) -> A2AResponse {
        let task = req.task_id.as_str();
        self.record(task, "received", req.skill_id.clone());
        if task.trim().is_empty() {
            return self.reject(task, "empty task id".into());
        }
        if !self.seen.lock().expect("task ids").insert(task.to_string()) {
            return self.reject(task, format!("duplicate task id {task}"));
        }
        let Some(skill) = self.card.skill(&req.skill_id) else {
            return self.reject(task, format!("unknown skill {}", req.skill_id));
        };
        if let Err(e) = validate_value(&skill.input_schema, &req.input) {
            return self.reject(task, format!("input does not match the schema of {}: {e}", skill.id));
        }
        let mut input = req.input.clone();
        let mut locked = BTreeSet::new();
        for (name, field) in &skill.input_schema {
            if field.ty != FieldType::Path {
                continue;
            }
            let Some(raw) = input.get(name).and_then(Value::as_str).map(str::to_string) else { continue };
            let rel = if is_url(&raw) {
                match self.fetch_into_inbox(task, &raw) {
                    Ok(rel) => rel,
                    Err(why) => return self.fail(task, why),
                }
            } else {
                raw
            };
            match self.policy.resolve(&rel) {
                Ok(p) => {
                    locked.insert(p);
                }
                Err(e) => return self.reject(task, format!("input {name}: {e}")),
            }
            input[name] = Value::String(rel);
        }
        self.record(task, "validation-pass", skill.id.clone());
        let script = render_template(&skill.backing.invocation, &input);
        let outcome = {
            let _guards: Vec<_> = locked.iter().map(|p| self.locks.lock(p)).collect();
            self.executions.fetch_add(1, Ordering::SeqCst);
            self.record(task, "exec", script.clone());
            sandbox::run(&self.policy, &ExecRequest::new(&script))
        };
        if !outcome.success() {
            return self.fail(task, outcome.transcript(&script));
        }
        let output = skill.collect_output(&outcome.stdout, &input);
        if let Err(e) = validate_value(&skill.output_schema, &output) {
            return self.fail(task, format!("output does not match the schema: {e}\n{}", outcome.transcript(&script)));
        }
        let mut artifacts = Vec::new();
        for (name, field) in &skill.output_schema {
            if field.ty != FieldType::Path {
                continue;
            }
            let Some(path) = output.get(name).and_then(Value::as_str).and_then(|p| self.policy.resolve(p).ok()) else {
                continue;
            };
            if !nonempty(&path) {
                return self.fail(task, format!("output {name} ({}) is missing or empty", path.display()));
            }
            let token = hex::encode(&Sha256::digest(format!("{}\0{task}\0{name}", self.card.agent_name))[..12]);
            self.artifacts.lock().expect("artifact table").insert(token.clone(), path);
            artifacts.push(ArtifactRef {
                token,
                name: name.clone(),
            });
        }
        self.record(task, "completed", String::new());
        A2AResponse {
            task_id: task.to_string(),
            status: ResponseStatus::Completed,
            output: Some(output),
            artifacts,
            diagnostic: None,
            usage: TokenUsage::default(),
        }
    }

    fn respond_http(&self, mut request: tiny_http::Request) {
        let json = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
        let method = request.method().clone();
        let url = request.url().to_string();
        let reply = match (method, url.as_str()) {
            (tiny_http::Method::Get, CARD_PATH) => {
                tiny_http::Response::from_string(self.card_doc.clone()).with_header(json)
            }
            (tiny_http::Method::Post, TASKS_PATH) => {
                let mut body = String::new();
                let read = request.as_reader().take(MAX_BODY).read_to_string(&mut body);
                let (code, resp) = match read.map_err(|e| e.to_string()).and_then(|_| {
                    serde_json::from_str::<A2ARequest>(&body).map_err(|e| e.to_string())
                }) {
                    Ok(req) => (200, self.handle(&req)),
                    Err(e) => (400, self.reject("", format!("malformed request: {e}"))),
                };
                let text = serde_json::to_string(&resp).expect("response serializes");
                tiny_http::Response::from_string(text).with_header(json).with_status_code(code)
            }
            (tiny_http::Method::Get, path) if path.starts_with(ARTIFACTS_PATH) => {
                let token = &path[ARTIFACTS_PATH.len()..];
                match self.artifact(token).and_then(|p| fs::read(&p).ok().map(|b| (p, b))) {
                    Some((p, bytes)) => {
                        let name = p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
                        let header = tiny_http::Header::from_bytes("X-Artifact-Name", name.as_bytes())
                            .expect("file names are valid header bytes");
                        let resp = tiny_http::Response::from_data(bytes).with_header(header);
                        let _ = request.respond(resp);
                        return;
                    }
                    None => tiny_http::Response::from_string("unknown artifact").with_status_code(404),
                }
            }
            _ => tiny_http::Response::from_string("not found").with_status_code(404),
        };
        let _ = request.respond(reply);
    }
}

/// A running service. Dropping it stops the workers.
pub struct ServiceHandle {
    service: Arc<Service>,
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ServiceHandle {
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn service(&self) -> &Arc<Service> {
        &self.service
    }

    /// Block until the workers exit (they only do after `stop`).
    pub fn wait(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Bind `host:port` (port 0 picks a free one) and serve with `workers`
/// threads.
pub fn serve(service: Arc<Service>, host: &str, port: u16, workers: usize) -> Result<ServiceHandle> {
    let listener = TcpListener::bind((host, port)).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => Error::PortInUse { port },
        _ => Error::io(format!("{host}:{port}"), e),
    })?;
    let addr = listener.local_addr().map_err(|e| Error::io(format!("{host}:{port}"), e))?;
    let server = Arc::new(
        tiny_http::Server::from_listener(listener, None).map_err(|e| Error::Other(format!("starting server: {e}")))?,
    );
    let stop = Arc::new(AtomicBool::new(false));
    let workers = (0..workers.max(1))
        .map(|_| {
            let server = Arc::clone(&server);
            let service = Arc::clone(&service);
            let stop = Arc::clone(&stop);
            std::thread::spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    if let Ok(Some(req)) = server.recv_timeout(Duration::from_millis(50)) {
                        service.respond_http(req);
                    }
                }
            })
        })
        .collect();
    Ok(ServiceHandle {
        service,
        addr,
        stop,
        workers,
    })
}

/// Records of a service log.
pub fn read_service_log(ws: &Workspace) -> Result<Vec<ServiceRecord>> {
    let path = ws.service_log();
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })
        })
        .collect()
}
