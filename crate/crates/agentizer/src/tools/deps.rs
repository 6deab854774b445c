//! `install-deps`: resolve a dependency manifest and install it under the
//! workspace's `envdir`.
//!
//! With a local package index (`<index>/<name>-<version>/`, optional
//! `requires.txt` for transitive requirements) resolution is done here and
//! packages are copied into `envdir/site`. Without one the matching external
//! installer is driven through the sandbox.

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use agentizer_core::env::{Artifact, ArtifactKind};
use agentizer_core::ContextKind;
use serde::{Deserialize, Serialize};

use super::ArgType as A;
use super::{str_arg, Args, Tool, ToolContext, ToolErrorKind, ToolResult, ToolSpec};
use crate::sandbox::{self, ExecRequest};
use crate::workspace::{write_doc, Workspace};

/// Index searched when the call names none.
pub const DEFAULT_INDEX: &str = ".agentizer-index";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ManifestKind {
    Requirements,
    CondaEnv,
    Lockfile,
    CustomScript,
}

impl ManifestKind {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "requirements" | "pip" => ManifestKind::Requirements,
            "conda" | "conda-env" => ManifestKind::CondaEnv,
            "lockfile" | "lock" => ManifestKind::Lockfile,
            "script" | "custom-script" => ManifestKind::CustomScript,
            _ => return None,
        })
    }

    pub fn detect(path: &Path) -> Option<Self> {
        let name = path.file_name()?.to_string_lossy().to_ascii_lowercase();
        if name.ends_with(".sh") {
            Some(ManifestKind::CustomScript)
        } else if name.ends_with(".lock") || name.contains("lock") {
            Some(ManifestKind::Lockfile)
        } else if name == "environment.yml" || name == "environment.yaml" {
            Some(ManifestKind::CondaEnv)
        } else if name.ends_with(".txt") || name.starts_with("requirements") {
            Some(ManifestKind::Requirements)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Constraint {
    Any,
    Eq(String),
    Ge(String),
}

impl Constraint {
    fn allows(&self, version: &str) -> bool {
        match self {
            Constraint::Any => true,
            Constraint::Eq(v) => compare_versions(version, v) == Ordering::Equal,
            Constraint::Ge(v) => compare_versions(version, v) != Ordering::Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Requirement {
    pub name: String,
    pub constraint: Constraint,
    /// Where the requirement came from, e.g. `requirements.txt:2`.
    pub source: String,
    pub line: String,
}

pub fn normalize_name(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace('_', "-")
}

/// Numeric-aware comparison: `1.10` > `1.9`, missing segments count as 0.
pub fn compare_versions(a: &str, b: &str) -> Ordering {
    let seg = |s: &str| -> Vec<String> { s.split(['.', '-']).map(str::to_string).collect() };
    let (sa, sb) = (seg(a), seg(b));
    for i in 0..sa.len().max(sb.len()) {
        let x = sa.get(i).map(String::as_str).unwrap_or("0");
        let y = sb.get(i).map(String::as_str).unwrap_or("0");
        let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
            (Ok(p), Ok(q)) => p.cmp(&q),
            _ => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    Ordering::Equal
}

/// Parse one requirement specifier (`name`, `name==1.0`, `name>=1.0`,
/// conda's `name=1.0`).
pub fn parse_spec(spec: &str, source: &str) -> Result<Requirement, String> {
    let spec = spec.split(';').next().unwrap_or_default().trim();
    let split = |op: &str| spec.split_once(op).map(|(n, v)| (n.trim(), v.trim()));
    let (name, constraint) = if let Some((n, v)) = split("==") {
        (n, Constraint::Eq(v.into()))
    } else if let Some((n, v)) = split(">=") {
        (n, Constraint::Ge(v.into()))
    } else if let Some((n, v)) = split("=") {
        (n, Constraint::Eq(v.trim_end_matches(".*").into()))
    } else if spec.contains(['<', '>', '~', '!']) {
        return Err(format!("{source}: unsupported specifier {spec:?}"));
    } else {
        (spec, Constraint::Any)
    };
    let valid = !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if !valid {
        return Err(format!("{source}: bad package name in {spec:?}"));
    }
    if matches!(&constraint, Constraint::Eq(v) | Constraint::Ge(v) if v.is_empty()) {
        return Err(format!("{source}: empty version in {spec:?}"));
    }
    Ok(Requirement {
        name: normalize_name(name),
        constraint,
        source: source.into(),
        line: spec.into(),
    })
}

pub fn parse_requirements(text: &str, file: &str) -> Result<Vec<Requirement>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or_default().trim();
        if line.is_empty() || line.starts_with('-') {
            continue;
        }
        out.push(parse_spec(line, &format!("{file}:{}", i + 1))?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CondaEnv {
    #[serde(default)]
    dependencies: Vec<serde_yaml::Value>,
}

/// Package specs of a conda environment file, pip sub-lists included. The
/// interpreter pin is left to the environment.
pub fn parse_conda(text: &str, file: &str) -> Result<Vec<Requirement>, String> {
    let env: CondaEnv = serde_yaml::from_str(text).map_err(|e| format!("{file}: {e}"))?;
    let mut out = Vec::new();
    for (i, dep) in env.dependencies.iter().enumerate() {
        let source = format!("{file}:dependencies[{i}]");
        match dep {
            serde_yaml::Value::String(s) => {
                let r = parse_spec(s, &source)?;
                if r.name != "python" && r.name != "pip" {
                    out.push(r);
                }
            }
            serde_yaml::Value::Mapping(m) => {
                for v in m.values().filter_map(|v| v.as_sequence()).flatten() {
                    if let Some(s) = v.as_str() {
                        out.push(parse_spec(s, &source)?);
                    }
                }
            }
            other => return Err(format!("{source}: unsupported entry {other:?}")),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Resolved {
    pub name: String,
    pub version: String,
    #[serde(skip)]
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolveError {
    Conflict { first: Requirement, second: Requirement },
    Unavailable(Requirement),
    Malformed(String),
}

impl std::fmt::Display for ResolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ResolveError::Conflict { first, second } => write!(
                f,
                "conflicting requirements: {} ({}) vs {} ({})",
                first.line, first.source, second.line, second.source
            ),
            ResolveError::Unavailable(r) => write!(f, "no version of {} satisfies {} ({})", r.name, r.line, r.source),
            ResolveError::Malformed(m) => f.write_str(m),
        }
    }
}

pub struct LocalIndex {
    root: PathBuf,
}

impl LocalIndex {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Versions available for `name`, newest first.
    pub fn versions(&self, name: &str) -> Vec<(String, PathBuf)> {
        let mut out = Vec::new();
        let Ok(entries) = fs::read_dir(&self.root) else {
            return out;
        };
        for e in entries.flatten() {
            let file = e.file_name().to_string_lossy().into_owned();
            if let Some((n, v)) = file.rsplit_once('-') {
                if normalize_name(n) == name && e.path().is_dir() {
                    out.push((v.to_string(), e.path()));
                }
            }
        }
        out.sort_by(|a, b| compare_versions(&b.0, &a.0));
        out
    }

    /// Breadth-first resolution. A package's version is fixed when it is
    /// first reached; a later requirement it does not satisfy is a conflict
    /// naming both sources.
    #[allow(clippy::result_large_err)]
    pub fn resolve(&self, roots: Vec<Requirement>) -> Result<Vec<Resolved>, ResolveError> {
        let mut chosen: BTreeMap<String, (Resolved, Requirement)> = BTreeMap::new();
        let mut pending: BTreeMap<String, Vec<Requirement>> = BTreeMap::new();
        for r in &roots {
            pending.entry(r.name.clone()).or_default().push(r.clone());
        }
        // Direct requirements must agree among themselves before anything
        // is picked.
        for reqs in pending.values() {
            for (i, a) in reqs.iter().enumerate() {
                for b in &reqs[i + 1..] {
                    if let (Constraint::Eq(x), Constraint::Eq(y)) = (&a.constraint, &b.constraint) {
                        if compare_versions(x, y) != Ordering::Equal {
                            return Err(ResolveError::Conflict { first: a.clone(), second: b.clone() });
                        }
                    }
                }
            }
        }
        let mut queue: VecDeque<Requirement> = roots.into();
        while let Some(req) = queue.pop_front() {
            if let Some((got, first)) = chosen.get(&req.name) {
                if !req.constraint.allows(&got.version) {
                    return Err(ResolveError::Conflict { first: first.clone(), second: req });
                }
                continue;
            }
            let constraints = pending.get(&req.name).cloned().unwrap_or_else(|| vec![req.clone()]);
            let available = self.versions(&req.name);
            let pick = available
                .iter()
                .find(|(v, _)| constraints.iter().all(|c| c.constraint.allows(v)) && req.constraint.allows(v))
                .cloned();
            let Some((version, dir)) = pick else {
                let jointly = |a: &Requirement, b: &Requirement| {
                    available.iter().any(|(v, _)| a.constraint.allows(v) && b.constraint.allows(v))
                };
                for (i, a) in constraints.iter().enumerate() {
                    if let Some(b) = constraints[i + 1..].iter().find(|b| !jointly(a, b)) {
                        if jointly(a, a) && jointly(b, b) {
                            return Err(ResolveError::Conflict { first: a.clone(), second: b.clone() });
                        }
                    }
                }
                return Err(ResolveError::Unavailable(req));
            };
            let requires = dir.join("requires.txt");
            if let Ok(text) = fs::read_to_string(&requires) {
                let label = format!("{}-{version}/requires.txt", req.name);
                for sub in parse_requirements(&text, &label).map_err(ResolveError::Malformed)? {
                    pending.entry(sub.name.clone()).or_default().push(sub.clone());
                    queue.push_back(sub);
                }
            }
            chosen.insert(req.name.clone(), (Resolved { name: req.name.clone(), version, dir }, req));
        }
        Ok(chosen.into_values().map(|(r, _)| r).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct InstalledRecord {
    pub manifest: String,
    pub backend: String,
    pub packages: Vec<Resolved>,
}

pub fn installed_path(ws: &Workspace) -> PathBuf {
    ws.envdir().join("installed.json")
}

fn copy_package(from: &Path, site: &Path) -> std::io::Result<()> {
    for entry in walkdir::WalkDir::new(from).min_depth(1).sort_by_file_name() {
        let entry = entry.map_err(std::io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("under package dir");
        if rel == Path::new("requires.txt") {
            continue;
        }
        let dest = site.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest)?;
        } else {
            fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

pub struct InstallDeps;

impl InstallDeps {
    fn local(
        &self,
        cx: &ToolContext<'_>,
        manifest_rel: &str,
        kind: ManifestKind,
        reqs: Vec<Requirement>,
        index: &Path,
    ) -> ToolResult {
        let resolved = match LocalIndex::new(index).resolve(reqs) {
            Ok(r) => r,
            Err(e @ ResolveError::Conflict { .. }) => return ToolResult::failure(ToolErrorKind::ResolverConflict, e.to_string()),
            Err(e) => return ToolResult::failure(ToolErrorKind::ExecutionFailed, e.to_string()),
        };
        let site = cx.ws.envdir().join("site");
        let record_path = installed_path(cx.ws);
        let _guard = cx.locks.lock(&record_path);
        for r in &resolved {
            if let Err(e) = fs::create_dir_all(&site).and_then(|_| copy_package(&r.dir, &site)) {
                return ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("installing {}: {e}", r.name));
            }
        }
        let mut record: Vec<InstalledRecord> = crate::workspace::read_doc(&record_path).unwrap_or_default();
        record.retain(|r| r.manifest != manifest_rel);
        record.push(InstalledRecord {
            manifest: manifest_rel.into(),
            backend: format!("local-index:{kind:?}").to_ascii_lowercase(),
            packages: resolved.clone(),
        });
        if let Err(e) = write_doc(&record_path, &record) {
            return ToolResult::failure(ToolErrorKind::ExecutionFailed, e.to_string());
        }
        let listing: Vec<String> = resolved.iter().map(|r| format!("{}=={}", r.name, r.version)).collect();
        let mut result = ToolResult::success().with_item(
            ContextKind::Configuration,
            format!("installed from {manifest_rel}:\n{}", listing.join("\n")),
        );
        let site_rel = cx.ws.relative(&site);
        for pkg in listing {
            result.descriptors.push(Artifact {
                kind: ArtifactKind::Package,
                name: pkg,
                path: site_rel.clone(),
            });
        }
        result.with_artifact(cx.ws, &record_path, ArtifactKind::File, "installed packages")
    }

    fn external(&self, cx: &ToolContext<'_>, manifest: &Path, kind: ManifestKind) -> ToolResult {
        let q = |p: &Path| agentizer_core::a2a::shell_quote(&p.to_string_lossy());
        let site = cx.ws.envdir().join("site");
        let offline = if cx.policy.require_network().is_err() { " --no-index" } else { "" };
        let (probe, script) = match kind {
            ManifestKind::Requirements | ManifestKind::Lockfile => (
                "python3 -m pip --version",
                format!(
                    "python3 -m pip install --disable-pip-version-check{offline}{} --target {} -r {}",
                    if kind == ManifestKind::Lockfile { " --no-deps" } else { "" },
                    q(&site),
                    q(manifest)
                ),
            ),
            ManifestKind::CondaEnv => (
                "command -v conda",
                format!("conda env create --yes -p {} -f {}", q(&cx.ws.envdir().join("conda")), q(manifest)),
            ),
            ManifestKind::CustomScript => ("true", format!("sh {}", q(manifest))),
        };
        if !sandbox::run(cx.policy, &ExecRequest::new(probe)).success() {
            return ToolResult::failure(
                ToolErrorKind::InstallerMissing,
                format!("no installer for {kind:?} manifests: `{probe}` failed"),
            );
        }
        let out = sandbox::run(cx.policy, &ExecRequest::new(&script));
        let transcript = out.transcript(&script);
        if !out.success() {
            let mut r = ToolResult::failure(ToolErrorKind::ExecutionFailed, transcript.clone());
            r.retryable = !out.timed_out;
            return r.with_item(ContextKind::CommandOutput, transcript);
        }
        ToolResult::success()
            .with_item(ContextKind::Command, script)
            .with_item(ContextKind::CommandOutput, transcript)
    }
}

impl Tool for InstallDeps {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("install-deps", "Install the packages a dependency manifest lists into the environment.", true)
            .arg("manifest", A::Path, true)
            .arg("kind", A::String, false)
            .arg("index", A::Path, false)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let raw = str_arg(args, "manifest").unwrap_or_default();
        let manifest = match cx.policy.resolve(raw) {
            Ok(p) => p,
            Err(e) => return e.into(),
        };
        let kind = match str_arg(args, "kind") {
            Some(k) => ManifestKind::parse(k),
            None => ManifestKind::detect(&manifest),
        };
        let Some(kind) = kind else {
            return ToolResult::failure(ToolErrorKind::Precondition, format!("cannot tell what kind of manifest {raw} is"));
        };
        let text = match fs::read_to_string(&manifest) {
            Ok(t) => t,
            Err(e) => return ToolResult::failure(ToolErrorKind::Precondition, format!("{raw}: {e}")),
        };
        let index = match str_arg(args, "index") {
            Some(i) => match cx.policy.resolve(i) {
                Ok(p) => Some(p),
                Err(e) => return e.into(),
            },
            None => Some(cx.ws.root().join(DEFAULT_INDEX)).filter(|p| p.is_dir()),
        };
        let manifest_rel = cx.ws.relative(&manifest);
        let parsed = match kind {
            ManifestKind::Requirements => parse_requirements(&text, &manifest_rel),
            ManifestKind::Lockfile => parse_requirements(&text, &manifest_rel).and_then(|reqs| {
                match reqs.iter().find(|r| !matches!(r.constraint, Constraint::Eq(_))) {
                    Some(r) => Err(format!("{}: lockfile entry {:?} is not pinned", r.source, r.line)),
                    None => Ok(reqs),
                }
            }),
            ManifestKind::CondaEnv => parse_conda(&text, &manifest_rel),
            ManifestKind::CustomScript => Ok(Vec::new()),
        };
        let reqs = match parsed {
            Ok(r) => r,
            Err(e) => return ToolResult::failure(ToolErrorKind::Precondition, e),
        };
        match (kind, index) {
            (ManifestKind::CustomScript, _) | (_, None) => self.external(cx, &manifest, kind),
            (_, Some(index)) => self.local(cx, &manifest_rel, kind, reqs, &index),
        }
    }
}
