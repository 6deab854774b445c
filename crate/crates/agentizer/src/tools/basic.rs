use std::fs;
use std::io::Write;
use std::os::unix::fs::PermissionsExt;
use std::time::Duration;

use agentizer_core::ContextKind;

use super::{artifact_kind_for, list_arg, str_arg, Args, Tool, ToolContext, ToolErrorKind, ToolResult, ToolSpec};
use super::ArgType as A;
use crate::sandbox::{self, ExecRequest};

const READ_CAP: u64 = 64 * 1024;

fn is_code(path: &str) -> bool {
    const CODE: &[&str] = &["rs", "py", "sh", "js", "ts", "c", "h", "cpp", "go", "java", "rb", "toml", "cfg"];
    std::path::Path::new(path)
        .extension()
        .is_some_and(|e| CODE.contains(&e.to_string_lossy().as_ref()))
}

pub struct ReadFile;

impl Tool for ReadFile {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("read-file", "Read a workspace file into the context.", false)
            .arg("path", A::Path, true)
            .arg("max-bytes", A::Integer, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let raw = str_arg(args, "path").unwrap_or_default();
        let path = match cx.policy.resolve(raw) {
            Ok(p) => p,
            Err(e) => return e.into(),
        };
        let cap = args.get("max-bytes").and_then(|v| v.as_u64()).unwrap_or(READ_CAP);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) => return ToolResult::failure(ToolErrorKind::Precondition, format!("{raw}: {e}")),
        };
        let shown = &bytes[..bytes.len().min(cap as usize)];
        let mut text = String::from_utf8_lossy(shown).into_owned();
        if shown.len() < bytes.len() {
            text.push_str(&format!("\n[truncated at {} of {} bytes]", shown.len(), bytes.len()));
        }
        let kind = if is_code(raw) { ContextKind::CodeSlice } else { ContextKind::DocSlice };
        ToolResult::success().with_item(kind, format!("{}:\n{text}", cx.ws.relative(&path)))
    }
}

pub struct WriteFile;

impl Tool for WriteFile {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("write-file", "Create or overwrite a workspace file.", true)
            .arg("path", A::Path, true)
            .arg("content", A::String, true)
            .arg("executable", A::Boolean, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let raw = str_arg(args, "path").unwrap_or_default();
        let content = str_arg(args, "content").unwrap_or_default();
        let path = match cx.policy.resolve(raw) {
            Ok(p) => p,
            Err(e) => return e.into(),
        };
        let _guard = cx.locks.lock(&path);
        let write = || -> std::io::Result<()> {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::File::create(&path)?.write_all(content.as_bytes())?;
            if args.get("executable").and_then(|v| v.as_bool()) == Some(true) {
                fs::set_permissions(&path, fs::Permissions::from_mode(0o755))?;
            }
            Ok(())
        };
        if let Err(e) = write() {
            return ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("{raw}: {e}"));
        }
        let rel = cx.ws.relative(&path);
        let result = ToolResult::success().with_item(ContextKind::Configuration, format!("wrote {rel}:\n{content}"));
        if content.is_empty() {
            return result;
        }
        result.with_artifact(cx.ws, &path, artifact_kind_for(&rel), &rel)
    }
}

pub struct ExecScript;

impl Tool for ExecScript {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("exec-script", "Run a shell script inside the workspace sandbox.", true)
            .arg("script", A::String, true)
            .arg("cwd", A::Path, false)
            .arg("timeout-secs", A::Integer, false)
            .arg("produces", A::StringList, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let script = str_arg(args, "script").unwrap_or_default();
        let mut req = ExecRequest::new(script);
        if let Some(cwd) = str_arg(args, "cwd") {
            match cx.policy.resolve(cwd) {
                Ok(p) => req.cwd = Some(p),
                Err(e) => return e.into(),
            }
        }
        if let Some(secs) = args.get("timeout-secs").and_then(|v| v.as_u64()) {
            req.timeout = Some(Duration::from_secs(secs.max(1)));
        }
        let mut produces = Vec::new();
        for raw in list_arg(args, "produces") {
            match cx.policy.resolve(&raw) {
                Ok(p) => produces.push(p),
                Err(e) => return e.into(),
            }
        }
        let outcome = sandbox::run(cx.policy, &req);
        let transcript = outcome.transcript(script);
        let tpath = cx.ws.transcript(cx.node_id);
        if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(&tpath) {
            let _ = f.write_all(transcript.as_bytes());
        }
        let mut result = if outcome.timed_out {
            let mut r = ToolResult::failure(
                ToolErrorKind::Timeout,
                format!("script exceeded {:?}\n{transcript}", req.timeout.unwrap_or(cx.policy.wall_clock_limit)),
            );
            r.retryable = true;
            r
        } else if !outcome.success() {
            let mut r = ToolResult::failure(ToolErrorKind::ExecutionFailed, transcript.clone());
            r.retryable = true;
            r
        } else {
            ToolResult::success()
        };
        result = result
            .with_item(ContextKind::Command, script)
            .with_item(ContextKind::CommandOutput, transcript);
        if !result.is_success() {
            return result;
        }
        for p in &produces {
            let rel = cx.ws.relative(p);
            result = result.with_artifact(cx.ws, p, artifact_kind_for(&rel), &rel);
        }
        result
    }
}

pub struct Think;

impl Tool for Think {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("think", "Record reasoning without side effects.", false).arg("thought", A::String, true)
    }

    fn run(&self, args: &Args, _cx: &ToolContext<'_>) -> ToolResult {
        let thought = str_arg(args, "thought").unwrap_or_default();
        ToolResult::success().with_item(ContextKind::DocSlice, format!("reasoning: {thought}"))
    }
}

pub struct Finish;

impl Tool for Finish {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("finish", "Declare the goal handled.", false).arg("summary", A::String, false)
    }

    fn run(&self, args: &Args, _cx: &ToolContext<'_>) -> ToolResult {
        let summary = str_arg(args, "summary").unwrap_or("no summary");
        ToolResult::success().with_item(ContextKind::DocSlice, format!("finished: {summary}"))
    }
}

pub struct CkgQuery;

impl Tool for CkgQuery {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("ckg-query", "Search the code knowledge graph.", false)
            .arg("query", A::String, true)
            .arg("limit", A::Integer, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let query = str_arg(args, "query").unwrap_or_default();
        let limit = args.get("limit").and_then(|v| v.as_u64()).unwrap_or(5) as usize;
        let graph = match crate::knowledge::load_or_build_ckg(cx.ws) {
            Ok(g) => g,
            Err(e) => return ToolResult::failure(ToolErrorKind::Precondition, e.to_string()),
        };
        let hits: Vec<_> = graph.query(query).into_iter().take(limit).collect();
        let mut out = format!("ckg results for {query:?}:");
        if hits.is_empty() {
            out.push_str(" none");
        }
        for e in hits {
            out.push_str(&format!("\n{} ({:?})", e.id, e.kind));
            if let Some(loc) = &e.location {
                out.push_str(&format!(" at {}", loc.path));
            }
            if !e.summary.is_empty() {
                out.push_str(&format!(": {}", e.summary));
            }
        }
        ToolResult::success().with_item(ContextKind::DocSlice, out)
    }
}

/// Placeholder entry so the planner can name the tool. The engine handles
/// delegate nodes itself, so reaching `run` is a misuse.
pub struct SpawnTrajectory;

impl Tool for SpawnTrajectory {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new(super::SPAWN_TRAJECTORY, "Run a goal in its own sub-trajectory (engine only).", true)
            .arg("goal", A::String, false)
    }

    fn run(&self, _args: &Args, _cx: &ToolContext<'_>) -> ToolResult {
        ToolResult::failure(ToolErrorKind::EngineOnly, "spawn-trajectory is executed by the engine, not as a tool")
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::fixture;
    use super::super::{PathLocks, Registry, ToolStatus};
    use super::*;
    use agentizer_core::Operation;

    #[test]
    fn write_read_and_exec() {
        let (_d, ws, policy) = fixture();
        let locks = PathLocks::default();
        let cx = ToolContext {
            ws: &ws,
            policy: &policy,
            node_id: "n1",
            locks: &locks,
            todo: None,
            env: None,
        };
        let reg = Registry::standard();
        let w = reg.invoke(&Operation::new("write-file").arg("path", "conf/a.txt").arg("content", "hello"), &cx);
        assert!(w.is_success(), "{w:?}");
        assert_eq!(w.artifacts, vec!["conf/a.txt".to_string()]);
        let r = reg.invoke(&Operation::new("read-file").arg("path", "conf/a.txt"), &cx);
        assert!(r.context_increment[0].payload.contains("hello"));

        let ok = reg.invoke(
            &Operation::new("exec-script")
                .arg("script", "tr a-z A-Z < conf/a.txt > out.txt")
                .arg("produces", serde_json::json!(["out.txt"])),
            &cx,
        );
        assert!(ok.is_success(), "{ok:?}");
        assert_eq!(fs::read_to_string(ws.root().join("out.txt")).unwrap(), "HELLO");
        assert!(ws.transcript("n1").exists());

        let missing = reg.invoke(
            &Operation::new("exec-script").arg("script", "true").arg("produces", serde_json::json!(["nothing.txt"])),
            &cx,
        );
        assert_eq!(missing.status, ToolStatus::Failure);

        let bad = reg.invoke(&Operation::new("exec-script").arg("script", "echo boom >&2; exit 3"), &cx);
        assert_eq!(bad.error, Some(ToolErrorKind::ExecutionFailed));
        assert!(bad.diagnostic.unwrap().contains("boom"));
    }

    #[test]
    fn escapes_are_sandbox_violations() {
        let (_d, ws, policy) = fixture();
        let locks = PathLocks::default();
        let cx = ToolContext {
            ws: &ws,
            policy: &policy,
            node_id: "n",
            locks: &locks,
            todo: None,
            env: None,
        };
        let r = Registry::standard().invoke(&Operation::new("write-file").arg("path", "../x").arg("content", "y"), &cx);
        assert_eq!(r.error, Some(ToolErrorKind::SandboxViolation));
    }
}
