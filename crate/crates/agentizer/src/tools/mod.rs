//! Tool registry. Applying an [`Operation`] through [`Registry::invoke`]
//! produces the context increment for the node that chose it.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex};

use agentizer_core::env::{Artifact, ArtifactKind};
use agentizer_core::todo::TodoList;
use agentizer_core::{ContextItem, ContextKind, EnvState, Operation};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::sandbox::{SandboxError, SandboxPolicy};
use crate::workspace::Workspace;

pub mod basic;
pub mod deps;
pub mod download;
pub mod todo;

pub const SPAWN_TRAJECTORY: &str = "spawn-trajectory";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArgType {
    String,
    Path,
    Integer,
    Boolean,
    StringList,
}

impl ArgType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Path => v.as_str().is_some_and(|s| !s.is_empty()),
            ArgType::Integer => v.is_u64() || v.is_i64(),
            ArgType::Boolean => v.is_boolean(),
            ArgType::StringList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ArgSpec {
    #[serde(rename = "type")]
    pub ty: ArgType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub argument_schema: BTreeMap<String, ArgSpec>,
    pub side_effecting: bool,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, side_effecting: bool) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            argument_schema: BTreeMap::new(),
            side_effecting,
        }
    }

    pub fn arg(mut self, name: &str, ty: ArgType, required: bool) -> Self {
        self.argument_schema.insert(name.into(), ArgSpec { ty, required });
        self
    }

    pub fn validate(&self, args: &BTreeMap<String, Value>) -> Result<(), String> {
        for (name, spec) in &self.argument_schema {
            match args.get(name) {
                None | Some(Value::Null) if spec.required => {
                    return Err(format!("{}: missing argument {name}", self.name))
                }
                Some(v) if !v.is_null() && !spec.ty.accepts(v) => {
                    return Err(format!("{}: argument {name} must be {:?}", self.name, spec.ty))
                }
                _ => {}
            }
        }
        if let Some(k) = args.keys().find(|k| !self.argument_schema.contains_key(*k)) {
            return Err(format!("{}: unknown argument {k}", self.name));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolStatus {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ToolErrorKind {
    UnknownTool,
    ArgumentSchema,
    SandboxViolation,
    Timeout,
    ExecutionFailed,
    NetworkError,
    ChecksumMismatch,
    ResolverConflict,
    InstallerMissing,
    Precondition,
    EngineOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ToolResult {
    pub status: ToolStatus,
    pub context_increment: Vec<ContextItem>,
    /// Workspace-relative paths created or updated.
    pub artifacts: Vec<String>,
    pub descriptors: Vec<Artifact>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ToolErrorKind>,
    #[serde(default)]
    pub retryable: bool,
}

impl ToolResult {
    pub fn success() -> Self {
        Self {
            status: ToolStatus::Success,
            context_increment: Vec::new(),
            artifacts: Vec::new(),
            descriptors: Vec::new(),
            diagnostic: None,
            error: None,
            retryable: false,
        }
    }

    pub fn failure(kind: ToolErrorKind, diagnostic: impl Into<String>) -> Self {
        let mut d = diagnostic.into();
        if d.trim().is_empty() {
            d = format!("{kind:?} without further detail");
        }
        Self {
            status: ToolStatus::Failure,
            diagnostic: Some(d),
            error: Some(kind),
            ..Self::success()
        }
    }

    pub fn is_success(&self) -> bool {
        self.status == ToolStatus::Success
    }

    pub fn with_item(mut self, kind: ContextKind, payload: impl Into<String>) -> Self {
        if let Ok(item) = ContextItem::new(kind, payload) {
            self.context_increment.push(item);
        }
        self
    }

    /// Record a created file. Only paths that exist become artifact items.
    pub fn with_artifact(mut self, ws: &Workspace, path: &Path, kind: ArtifactKind, name: &str) -> Self {
        let rel = ws.relative(path);
        if path.exists() {
            if let Ok(item) = ContextItem::new(ContextKind::ArtifactPath, rel.clone()) {
                self.context_increment.push(item);
            }
        }
        self.artifacts.push(rel.clone());
        self.descriptors.push(Artifact {
            kind,
            name: name.into(),
            path: rel,
        });
        self
    }
}

impl From<SandboxError> for ToolResult {
    fn from(e: SandboxError) -> Self {
        ToolResult::failure(ToolErrorKind::SandboxViolation, e.to_string())
    }
}

/// Advisory per-path locks serializing tools that touch the same file.
#[derive(Debug, Default)]
pub struct PathLocks {
    held: Mutex<HashSet<PathBuf>>,
    freed: Condvar,
}

pub struct PathGuard<'a> {
    locks: &'a PathLocks,
    path: PathBuf,
}

impl PathLocks {
    pub fn lock(&self, path: &Path) -> PathGuard<'_> {
        let mut held = self.held.lock().expect("path lock table");
        while held.contains(path) {
            held = self.freed.wait(held).expect("path lock table");
        }
        held.insert(path.to_path_buf());
        PathGuard {
            locks: self,
            path: path.to_path_buf(),
        }
    }
}

impl Drop for PathGuard<'_> {
    fn drop(&mut self) {
        if let Ok(mut held) = self.locks.held.lock() {
            held.remove(&self.path);
        }
        self.locks.freed.notify_all();
    }
}

/// Everything a tool may touch while running for one node.
pub struct ToolContext<'a> {
    pub ws: &'a Workspace,
    pub policy: &'a SandboxPolicy,
    pub node_id: &'a str,
    pub locks: &'a PathLocks,
    pub todo: Option<&'a Mutex<TodoList>>,
    pub env: Option<&'a Mutex<EnvState>>,
}

pub type Args = BTreeMap<String, Value>;

pub trait Tool: Send + Sync {
    fn spec(&self) -> ToolSpec;

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult;
}

pub(crate) fn str_arg<'a>(args: &'a Args, key: &str) -> Option<&'a str> {
    args.get(key).and_then(Value::as_str)
}

pub(crate) fn list_arg(args: &Args, key: &str) -> Vec<String> {
    args.get(key)
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
        .unwrap_or_default()
}

pub(crate) fn artifact_kind_for(path: &str) -> ArtifactKind {
    const MODEL: &[&str] = &["pt", "pth", "ckpt", "onnx", "safetensors", "h5", "pb", "gguf"];
    const DATA: &[&str] = &["csv", "tsv", "parquet", "jsonl", "npy", "npz", "zip", "tar", "gz"];
    let ext = Path::new(path)
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default();
    if MODEL.contains(&ext.as_str()) {
        ArtifactKind::Model
    } else if DATA.contains(&ext.as_str()) {
        ArtifactKind::Dataset
    } else {
        ArtifactKind::File
    }
}

pub struct Registry {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl Registry {
    pub fn empty() -> Self {
        Self { tools: BTreeMap::new() }
    }

    /// Every built-in tool.
    pub fn standard() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(basic::ReadFile));
        r.register(Box::new(basic::WriteFile));
        r.register(Box::new(basic::ExecScript));
        r.register(Box::new(basic::Think));
        r.register(Box::new(basic::Finish));
        r.register(Box::new(download::FileDownload));
        r.register(Box::new(deps::InstallDeps));
        r.register(Box::new(todo::TodoVerify));
        r.register(Box::new(basic::CkgQuery));
        r.register(Box::new(basic::SpawnTrajectory));
        r
    }

    /// Panics on a duplicate name: registries are assembled at start-up.
    pub fn register(&mut self, tool: Box<dyn Tool>) {
        let name = tool.spec().name;
        assert!(!self.tools.contains_key(&name), "tool {name} registered twice");
        self.tools.insert(name, tool);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    pub fn catalog(&self) -> Vec<ToolSpec> {
        self.tools.values().map(|t| t.spec()).collect()
    }

    pub fn invoke(&self, op: &Operation, cx: &ToolContext<'_>) -> ToolResult {
        let Some(tool) = self.tools.get(&op.tool) else {
            return ToolResult::failure(ToolErrorKind::UnknownTool, format!("unknown tool {:?}", op.tool));
        };
        if let Err(e) = tool.spec().validate(&op.arguments) {
            return ToolResult::failure(ToolErrorKind::ArgumentSchema, e);
        }
        let mut result = tool.run(&op.arguments, cx);
        if result.is_success() {
            let missing: Vec<&String> = result
                .artifacts
                .iter()
                .filter(|a| !nonempty(&cx.ws.root().join(a)))
                .collect();
            if !missing.is_empty() {
                let diag = format!("{} reported missing or empty artifacts: {missing:?}", op.tool);
                let increment = std::mem::take(&mut result.context_increment);
                result = ToolResult::failure(ToolErrorKind::ExecutionFailed, diag);
                result.context_increment = increment;
            }
        }
        result
    }
}

/// A regular file with content, or a directory with entries.
pub fn nonempty(path: &Path) -> bool {
    match std::fs::metadata(path) {
        Ok(m) if m.is_file() => m.len() > 0,
        Ok(m) if m.is_dir() => std::fs::read_dir(path).is_ok_and(|mut d| d.next().is_some()),
        _ => false,
    }
}
