//! Building the code knowledge graph and the usage knowledge base.
//!
//! Extraction is lexical: it recognizes definitions in the common scripting
//! and systems languages, executable entry points, README sections that
//! carry commands, and data or model files by location and extension.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::Path;
use std::time::Duration;

use agentizer_core::a2a::slug;
use agentizer_core::knowledge::{
    CkgEntity, CodeKnowledgeGraph, EntityKind, Location, Relation, UsageKb, UsageTuple,
};
use agentizer_core::planner::RequestKind;
use agentizer_core::{Context, ContextItem, ContextKind, Goal, GoalOrigin, Trajectory};

use crate::engine::Engine;
use crate::sandbox::{self, ExecRequest};
use crate::validation::fences;
use crate::workspace::{read_doc, Workspace, IGNORED_DIRS};
use crate::Result;

const MAX_FILE: u64 = 1024 * 1024;
const CODE_EXT: &[&str] = &["py", "sh", "bash", "awk", "rs", "js", "ts", "rb", "go", "c", "h", "cpp", "java", "pl"];
const DATA_EXT: &[&str] = &["csv", "tsv", "jsonl", "parquet", "npy", "npz", "arrow", "txt", "json"];
const MODEL_EXT: &[&str] = &["pt", "pth", "ckpt", "onnx", "safetensors", "h5", "pb", "gguf", "bin"];
const DATA_DIRS: &[&str] = &["data", "datasets", "dataset", "samples"];
const MODEL_DIRS: &[&str] = &["models", "model", "checkpoints", "weights"];

/// Interpreter line for a script: how the repository would run it.
pub fn run_command(rel: &str) -> String {
    match Path::new(rel).extension().and_then(|e| e.to_str()) {
        Some("py") => format!("python3 {rel}"),
        Some("sh") | Some("bash") => format!("sh {rel}"),
        _ => format!("./{rel}"),
    }
}

fn ext(rel: &str) -> String {
    Path::new(rel)
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase())
        .unwrap_or_default()
}

fn in_dir(rel: &str, dirs: &[&str]) -> bool {
    let mut comps: Vec<&str> = rel.split('/').collect();
    comps.pop();
    comps.iter().any(|c| dirs.contains(&c.to_ascii_lowercase().as_str()))
}

/// Leading comment block of a script, shebang skipped.
fn leading_comment(text: &str) -> String {
    let mut out = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.starts_with("#!") {
            continue;
        }
        let body = t
            .strip_prefix("//!")
            .or_else(|| t.strip_prefix("///"))
            .or_else(|| t.strip_prefix("//"))
            .or_else(|| t.strip_prefix('#'));
        match body {
            Some(b) => out.push(b.trim().to_string()),
            None if t.starts_with("\"\"\"") => {
                out.push(t.trim_matches('"').trim().to_string());
                break;
            }
            None => break,
        }
    }
    out.retain(|l| !l.is_empty());
    out.join(" ")
}

struct Def {
    kind: EntityKind,
    name: String,
    line: u32,
    indent: usize,
}

fn definitions(rel: &str, text: &str) -> Vec<Def> {
    let e = ext(rel);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let indent = line.len() - line.trim_start().len();
        let t = line.trim_start();
        let ident = |s: &str| -> Option<String> {
            let n: String = s.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
            (!n.is_empty()).then_some(n)
        };
        let found = match e.as_str() {
            "py" => t
                .strip_prefix("def ")
                .or_else(|| t.strip_prefix("async def "))
                .and_then(ident)
                .map(|n| (EntityKind::Function, n))
                .or_else(|| t.strip_prefix("class ").and_then(ident).map(|n| (EntityKind::ClassLike, n))),
            "sh" | "bash" => t
                .strip_prefix("function ")
                .and_then(ident)
                .or_else(|| {
                    let n = ident(t)?;
                    t[n.len()..].trim_start().starts_with("()").then_some(n)
                })
                .map(|n| (EntityKind::Function, n)),
            "rs" => {
                let t = t.strip_prefix("pub ").unwrap_or(t);
                let t = t.strip_prefix("pub(crate) ").unwrap_or(t);
                t.strip_prefix("fn ")
                    .and_then(ident)
                    .map(|n| (EntityKind::Function, n))
                    .or_else(|| {
                        ["struct ", "enum ", "trait "]
                            .iter()
                            .find_map(|k| t.strip_prefix(k).and_then(ident))
                            .map(|n| (EntityKind::ClassLike, n))
                    })
            }
            "js" | "ts" => t
                .strip_prefix("function ")
                .or_else(|| t.strip_prefix("export function "))
                .and_then(ident)
                .map(|n| (EntityKind::Function, n))
                .or_else(|| t.strip_prefix("class ").and_then(ident).map(|n| (EntityKind::ClassLike, n))),
            _ => None,
        };
        if let Some((kind, name)) = found {
            out.push(Def {
                kind,
                name,
                line: i as u32 + 1,
                indent,
            });
        }
    }
    out
}

/// Summary for a definition: a docstring right after it or a comment right
/// before it.
fn def_summary(lines: &[&str], line: u32) -> String {
    let idx = line as usize - 1;
    if let Some(next) = lines.get(idx + 1) {
        let t = next.trim();
        if t.starts_with("\"\"\"") || t.starts_with("'''") {
            return t.trim_matches(|c| c == '"' || c == '\'').trim().to_string();
        }
    }
    if idx > 0 {
        let prev = lines[idx - 1].trim();
        for p in ["///", "//", "#"] {
            if let Some(c) = prev.strip_prefix(p) {
                if !prev.starts_with("#!") {
                    return c.trim().to_string();
                }
            }
        }
    }
    String::new()
}

fn is_executable(path: &Path) -> bool {
    fs::metadata(path).is_ok_and(|m| m.permissions().mode() & 0o111 != 0)
}

/// Build the graph from the files under `root`.
pub fn build_ckg(root: &Path) -> CodeKnowledgeGraph {
    let mut g = CodeKnowledgeGraph::default();
    let mut texts: BTreeMap<String, String> = BTreeMap::new();
    let walker = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !IGNORED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()));
    let mut files = Vec::new();
    for entry in walker.flatten() {
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(root).expect("under root").to_string_lossy().into_owned();
        if rel.starts_with("vendor/") || rel == crate::planner::PLAN_FILE {
            continue;
        }
        files.push((rel, entry.path().to_path_buf()));
    }

    for (rel, path) in &files {
        let e = ext(rel);
        let text = fs::metadata(path)
            .ok()
            .filter(|m| m.len() <= MAX_FILE)
            .and_then(|_| fs::read_to_string(path).ok());
        let shebang = text.as_deref().is_some_and(|t| t.starts_with("#!"));
        let code = CODE_EXT.contains(&e.as_str()) || shebang;
        let loc = Location {
            path: rel.clone(),
            lines: None,
        };
        if code {
            let text = text.clone().unwrap_or_default();
            let file_id = format!("file:{rel}");
            g.add_entity(CkgEntity {
                id: file_id.clone(),
                kind: EntityKind::File,
                name: rel.clone(),
                location: Some(loc.clone()),
                summary: leading_comment(&text),
                command: None,
            });
            let lines: Vec<&str> = text.lines().collect();
            let defs = definitions(rel, &text);
            let mut classes: Vec<(usize, String)> = Vec::new();
            let mut fn_ids: Vec<(String, String, u32)> = Vec::new();
            for d in &defs {
                classes.retain(|(indent, _)| *indent < d.indent);
                let id = match d.kind {
                    EntityKind::ClassLike => format!("class:{rel}:{}:{}", d.name, d.line),
                    _ => format!("fn:{rel}:{}:{}", d.name, d.line),
                };
                g.add_entity(CkgEntity {
                    id: id.clone(),
                    kind: d.kind,
                    name: d.name.clone(),
                    location: Some(Location {
                        path: rel.clone(),
                        lines: Some((d.line, d.line)),
                    }),
                    summary: def_summary(&lines, d.line),
                    command: None,
                });
                let parent = classes.last().map(|(_, c)| c.clone()).unwrap_or_else(|| file_id.clone());
                g.add_edge(&parent, &id, Relation::Contains);
                match d.kind {
                    EntityKind::ClassLike => classes.push((d.indent, id)),
                    _ => fn_ids.push((id, d.name.clone(), d.line)),
                }
            }
            // Calls: a function body mentioning another function of the file.
            for (i, (id, _, line)) in fn_ids.iter().enumerate() {
                let end = fn_ids.get(i + 1).map(|f| f.2 as usize - 1).unwrap_or(lines.len());
                let body = lines[*line as usize..end.max(*line as usize)].join("\n");
                for (other, name, _) in &fn_ids {
                    if other != id && crate::knowledge::mentions_word(&body, name) {
                        g.add_edge(id, other, Relation::Calls);
                    }
                }
            }
            if is_executable(path) || shebang {
                let entry_id = format!("entry:{rel}");
                g.add_entity(CkgEntity {
                    id: entry_id.clone(),
                    kind: EntityKind::EntryPoint,
                    name: rel.clone(),
                    location: Some(loc.clone()),
                    summary: leading_comment(&text),
                    command: Some(run_command(rel)),
                });
                g.add_edge(&entry_id, &file_id, Relation::Calls);
            }
            texts.insert(rel.clone(), text);
        } else if MODEL_EXT.contains(&e.as_str()) || (in_dir(rel, MODEL_DIRS) && !rel.ends_with(".md")) {
            g.add_entity(CkgEntity {
                id: format!("model:{rel}"),
                kind: EntityKind::ModelArtifact,
                name: rel.clone(),
                location: Some(loc),
                summary: String::new(),
                command: None,
            });
        } else if in_dir(rel, DATA_DIRS) || (DATA_EXT.contains(&e.as_str()) && !rel.contains('/') && e != "txt" && e != "json") {
            g.add_entity(CkgEntity {
                id: format!("data:{rel}"),
                kind: EntityKind::Dataset,
                name: rel.clone(),
                location: Some(loc),
                summary: String::new(),
                command: None,
            });
        }
    }

    // Code that names a data or model file requires it.
    let artifacts: Vec<(String, String)> = g
        .entities
        .values()
        .filter(|e| matches!(e.kind, EntityKind::Dataset | EntityKind::ModelArtifact))
        .map(|e| (e.id.clone(), e.name.clone()))
        .collect();
    for (rel, text) in &texts {
        for (id, name) in &artifacts {
            let base = Path::new(name).file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
            if text.contains(name.as_str()) || (!base.is_empty() && text.contains(&base)) {
                g.add_edge(&format!("file:{rel}"), id, Relation::RequiresArtifact);
            }
        }
    }

    readme_capabilities(root, &mut g);
    script_capabilities(&mut g);
    g
}

pub(crate) fn mentions_word(text: &str, word: &str) -> bool {
    text.match_indices(word).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + word.len()..].chars().next();
        let boundary = |c: Option<char>| !c.is_some_and(|c| c.is_alphanumeric() || c == '_');
        boundary(before) && boundary(after)
    })
}

const SHELL_INFO: &[&str] = &["", "sh", "bash", "shell", "console"];

fn is_shell_fence(info: &str) -> bool {
    let first = info.split_whitespace().next().unwrap_or("");
    SHELL_INFO.contains(&first) && !info.split_whitespace().any(|w| w == "expected")
}

/// README sections (by heading) that contain shell commands become
/// capabilities documenting one entry point per command block.
fn readme_capabilities(root: &Path, g: &mut CodeKnowledgeGraph) {
    let Ok(text) = fs::read_to_string(root.join("README.md")) else {
        return;
    };
    let lines: Vec<&str> = text.lines().collect();
    let mut headings: Vec<(usize, String)> = Vec::new();
    let mut in_fence = false;
    for (i, l) in lines.iter().enumerate() {
        if l.trim_start().starts_with("```") {
            in_fence = !in_fence;
        } else if !in_fence && l.starts_with('#') {
            headings.push((i + 1, l.trim_start_matches('#').trim().to_string()));
        }
    }
    let file_ids: Vec<(String, String)> = g
        .of_kind(EntityKind::File)
        .map(|e| (e.id.clone(), e.name.clone()))
        .collect();
    for (start, info, body) in fences(&text) {
        if !is_shell_fence(&info) || body.trim().is_empty() {
            continue;
        }
        let Some((hline, heading)) = headings.iter().rev().find(|(l, _)| *l < start).cloned() else {
            continue;
        };
        // The top-level title describes the project, not a capability.
        if lines[hline - 1].starts_with("# ") && headings.iter().filter(|(l, _)| lines[*l - 1].starts_with("# ")).count() == 1 && headings.len() > 1 {
            continue;
        }
        let command: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).collect();
        let Some(first) = command.first() else { continue };
        let end = start + body.lines().count() + 1;
        let entry_id = format!("entry:readme:{start}");
        g.add_entity(CkgEntity {
            id: entry_id.clone(),
            kind: EntityKind::EntryPoint,
            name: first.to_string(),
            location: Some(Location {
                path: "README.md".into(),
                lines: Some((start as u32, end as u32)),
            }),
            summary: heading.clone(),
            command: Some(command.join("\n")),
        });
        for (fid, name) in &file_ids {
            if command.iter().any(|c| c.split_whitespace().any(|w| w.trim_start_matches("./") == name)) {
                g.add_edge(&entry_id, fid, Relation::Calls);
            }
        }
        let cap_id = format!("cap:{}", slug(&heading));
        if g.entity(&cap_id).is_none() {
            let para = lines[hline..start - 1]
                .iter()
                .map(|l| l.trim())
                .skip_while(|l| l.is_empty())
                .take_while(|l| !l.is_empty())
                .collect::<Vec<_>>()
                .join(" ");
            g.add_entity(CkgEntity {
                id: cap_id.clone(),
                kind: EntityKind::Capability,
                name: heading.clone(),
                location: Some(Location {
                    path: "README.md".into(),
                    lines: Some((hline as u32, hline as u32)),
                }),
                summary: para,
                command: None,
            });
        }
        g.add_edge(&cap_id, &entry_id, Relation::Documents);
    }
}

/// Executable scripts with a descriptive header that no README capability
/// covers get a capability of their own.
fn script_capabilities(g: &mut CodeKnowledgeGraph) {
    let covered: BTreeSet<String> = g
        .of_kind(EntityKind::Capability)
        .flat_map(|c| g.capability_code(&c.id))
        .flat_map(|e| g.edges_from(&e.id, Relation::Calls).map(|f| f.id.clone()).chain([e.id.clone()]))
        .collect();
    let scripts: Vec<CkgEntity> = g
        .of_kind(EntityKind::EntryPoint)
        .filter(|e| !e.id.starts_with("entry:readme:") && !e.summary.is_empty())
        .filter(|e| !covered.contains(&e.id) && !covered.contains(&format!("file:{}", e.name)))
        .cloned()
        .collect();
    for s in scripts {
        let stem = Path::new(&s.name).file_stem().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let cap_id = format!("cap:{}", slug(&stem));
        if g.entity(&cap_id).is_some() {
            continue;
        }
        g.add_entity(CkgEntity {
            id: cap_id.clone(),
            kind: EntityKind::Capability,
            name: stem,
            location: s.location.clone(),
            summary: s.summary.clone(),
            command: None,
        });
        g.add_edge(&cap_id, &s.id, Relation::Documents);
        g.add_edge(&format!("file:{}", s.name), &cap_id, Relation::ImplementsCapability);
    }
}

pub fn load_or_build_ckg(ws: &Workspace) -> Result<CodeKnowledgeGraph> {
    match read_doc(&ws.ckg()) {
        Ok(g) => Ok(g),
        Err(_) => Ok(build_ckg(ws.root())),
    }
}

/// `--help` transcript of the script behind a capability, if any.
fn help_transcript(engine: &Engine, graph: &CodeKnowledgeGraph, cap: &str) -> Option<String> {
    let file = graph
        .capability_code(cap)
        .into_iter()
        .flat_map(|e| {
            let mut v: Vec<&CkgEntity> = graph.edges_from(&e.id, Relation::Calls).collect();
            v.push(e);
            v
        })
        .find(|e| e.kind == EntityKind::File)?;
    let script = format!("{} --help", run_command(&file.name));
    let mut req = ExecRequest::new(&script);
    req.timeout = Some(Duration::from_secs(10));
    let out = sandbox::run(engine.policy(), &req);
    Some(out.transcript(&script))
}

/// One tuple per capability, answered by the planner from the graph and the
/// `--help` output; plus one tuple per successful command in the setup
/// history.
pub fn build_usage_kb(engine: &Engine, graph: &CodeKnowledgeGraph, history: &[Trajectory]) -> UsageKb {
    let mut kb = UsageKb::default();
    let caps: Vec<&CkgEntity> = graph.of_kind(EntityKind::Capability).collect();
    if caps.is_empty() {
        kb.warnings.push("no capabilities found in the repository".into());
    }
    for (i, cap) in caps.iter().enumerate() {
        let code = graph.capability_code(&cap.id);
        let invocation = code.iter().find_map(|e| e.command.clone());
        let help = help_transcript(engine, graph, &cap.id);
        let mut context = Context::new();
        let mut push = |kind, payload: String| {
            if let Ok(item) = ContextItem::new(kind, payload) {
                context.push(item);
            }
        };
        push(ContextKind::DocSlice, format!("{}: {}", cap.name, cap.summary));
        for e in &code {
            push(ContextKind::CodeSlice, format!("{} {}", e.id, e.command.clone().unwrap_or_default()));
        }
        if let Some(h) = &help {
            push(ContextKind::CommandOutput, h.clone());
        }
        let goal = Goal::new(engine.ids().goal("knowledge", i as u64), cap.name.clone(), GoalOrigin::Knowledge)
            .expect("capability names are non-empty");
        let mut answer = match engine.ask(RequestKind::AnswerUsage, &goal, &context, &cap.id) {
            Ok(resp) => resp.answer.unwrap_or_default(),
            Err(e) => {
                kb.degraded = true;
                kb.warnings.push(format!("{}: planner unavailable ({e}); answer built from the graph", cap.id));
                let mut a = if cap.summary.is_empty() { cap.name.clone() } else { cap.summary.clone() };
                if let Some(cmd) = &invocation {
                    a.push_str(&format!("\nRun: {cmd}"));
                }
                a
            }
        };
        if let Some(h) = help {
            answer.push_str("\n\n--help output:\n");
            answer.push_str(&h);
        }
        let mut backing = vec![cap.id.clone()];
        backing.extend(code.iter().map(|e| e.id.clone()));
        kb.tuples.push(UsageTuple {
            query: cap.name.clone(),
            answer,
            invocation,
            backing_entities: backing,
        });
    }
    for traj in history {
        for node in traj.graph.nodes.values() {
            let Some(op) = &node.operation else { continue };
            if op.tool != "exec-script" || node.state != agentizer_core::NodeState::Done {
                continue;
            }
            let Some(script) = op.str_arg("script") else { continue };
            if kb.tuples.iter().any(|t| t.query == node.goal.text) {
                continue;
            }
            kb.tuples.push(UsageTuple {
                query: node.goal.text.clone(),
                answer: format!("During setup this was done with:\n{script}"),
                invocation: Some(script.to_string()),
                backing_entities: Vec::new(),
            });
        }
    }
    kb
}

#[cfg(test)]
mod tests {
    use super::*;

    fn repo() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        let p = d.path();
        fs::write(
            p.join("README.md"),
            "# Demo\nA demo.\n\n## Resize images\nShrinks a picture.\n\n```sh\nsh resize.sh <input> <output>\n```\n",
        )
        .unwrap();
        fs::write(
            p.join("resize.sh"),
            "#!/bin/sh\n# Resize an image.\nhelper() {\n  echo hi\n}\nmain() {\n  helper\n}\nmain \"$@\"\n",
        )
        .unwrap();
        fs::set_permissions(p.join("resize.sh"), fs::Permissions::from_mode(0o755)).unwrap();
        fs::write(p.join("lib.py"), "class Box:\n    def area(self):\n        \"\"\"Area.\"\"\"\n        return 1\n\ndef load():\n    return open('data/items.csv')\n").unwrap();
        fs::create_dir_all(p.join("data")).unwrap();
        fs::write(p.join("data/items.csv"), "a,b\n").unwrap();
        d
    }

    #[test]
    fn extracts_entities_and_links() {
        let d = repo();
        let g = build_ckg(d.path());
        g.check().unwrap();
        for id in [
            "file:resize.sh",
            "fn:resize.sh:helper:3",
            "fn:resize.sh:main:6",
            "entry:resize.sh",
            "class:lib.py:Box:1",
            "fn:lib.py:area:2",
            "fn:lib.py:load:6",
            "data:data/items.csv",
            "cap:resize-images",
            "entry:readme:7",
        ] {
            assert!(g.entity(id).is_some(), "missing {id}: {:?}", g.entities.keys().collect::<Vec<_>>());
        }
        assert!(g.edges_from("fn:resize.sh:main:6", Relation::Calls).any(|e| e.id == "fn:resize.sh:helper:3"));
        assert!(g.edges_from("class:lib.py:Box:1", Relation::Contains).any(|e| e.id == "fn:lib.py:area:2"));
        assert!(g.edges_from("file:lib.py", Relation::RequiresArtifact).any(|e| e.id == "data:data/items.csv"));
        assert_eq!(g.entity("fn:lib.py:area:2").unwrap().summary, "Area.");
        assert!(g.edges_from("entry:readme:7", Relation::Calls).any(|e| e.id == "file:resize.sh"));
        // Covered by the README capability, so no extra script capability.
        assert_eq!(g.count(EntityKind::Capability), 1);
    }

    #[test]
    fn rebuild_is_identical_after_a_move() {
        let d = repo();
        let other = tempfile::tempdir().unwrap();
        crate::workspace::Workspace::prepare(d.path(), Some(&other.path().join("copy"))).unwrap();
        let a = build_ckg(d.path());
        let b = build_ckg(&other.path().join("copy"));
        assert_eq!(a, b);
    }
}
