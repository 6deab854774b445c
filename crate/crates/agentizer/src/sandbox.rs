//! Path confinement and script execution under a [`SandboxPolicy`].
//!
//! Path arguments are confined lexically and through symlinks. Scripts run in
//! their own process group with a cleared environment and a wall-clock limit;
//! where the kernel supports Landlock, the child is additionally restricted to
//! writing inside the workdir and, when the network is denied, to no TCP.

use std::io::{self, Read};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Component, Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::workspace::META_DIR;

/// Bytes kept from each of stdout and stderr.
pub const OUTPUT_CAP: usize = 256 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Network {
    Allowed,
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SandboxError {
    #[error("path {0:?} escapes the workdir")]
    Escape(String),
    #[error("path {0:?} is malformed")]
    Malformed(String),
    #[error("network access is denied by policy")]
    NetworkDenied,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SandboxPolicy {
    workdir: PathBuf,
    pub wall_clock_limit: Duration,
    pub network: Network,
    pub env_allowlist: Vec<String>,
}

pub const DEFAULT_ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "SOURCE_DATE_EPOCH"];

impl SandboxPolicy {
    /// `workdir` must exist; it is canonicalized.
    pub fn new(workdir: &Path, wall_clock_limit: Duration, network: Network) -> io::Result<Self> {
        Ok(Self {
            workdir: std::fs::canonicalize(workdir)?,
            wall_clock_limit,
            network,
            env_allowlist: DEFAULT_ENV_ALLOWLIST.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn workdir(&self) -> &Path {
        &self.workdir
    }

    pub fn require_network(&self) -> Result<(), SandboxError> {
        match self.network {
            Network::Allowed => Ok(()),
            Network::Denied => Err(SandboxError::NetworkDenied),
        }
    }

    /// Resolve a path argument to an absolute path inside the workdir.
    ///
    /// Relative paths are taken from the workdir. `..` is folded lexically
    /// and may not climb above the workdir; every existing prefix is then
    /// canonicalized so symlinks cannot lead outside either.
    pub fn resolve(&self, raw: &str) -> Result<PathBuf, SandboxError> {
        if raw.trim().is_empty() || raw.contains('\0') {
            return Err(SandboxError::Malformed(raw.into()));
        }
        let p = Path::new(raw);
        let mut out = if p.is_absolute() {
            PathBuf::from("/")
        } else {
            self.workdir.clone()
        };
        for c in p.components() {
            match c {
                Component::RootDir | Component::CurDir => {}
                Component::Prefix(_) => return Err(SandboxError::Malformed(raw.into())),
                Component::ParentDir => {
                    if !out.pop() {
                        return Err(SandboxError::Escape(raw.into()));
                    }
                }
                Component::Normal(s) => out.push(s),
            }
        }
        if !out.starts_with(&self.workdir) {
            return Err(SandboxError::Escape(raw.into()));
        }
        let mut probe = self.workdir.clone();
        for c in out.strip_prefix(&self.workdir).expect("checked above").components() {
            probe.push(c);
            match std::fs::symlink_metadata(&probe) {
                Ok(m) if m.file_type().is_symlink() => match std::fs::canonicalize(&probe) {
                    Ok(real) if real.starts_with(&self.workdir) => {}
                    _ => return Err(SandboxError::Escape(raw.into())),
                },
                Ok(_) => {}
                Err(_) => break,
            }
        }
        Ok(out)
    }

    pub fn home(&self) -> PathBuf {
        self.workdir.join(META_DIR).join("home")
    }

    pub fn tmpdir(&self) -> PathBuf {
        self.workdir.join(META_DIR).join("tmp")
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExecRequest {
    pub script: String,
    /// Working directory, already resolved; defaults to the workdir.
    pub cwd: Option<PathBuf>,
    /// Capped at the policy's wall-clock limit.
    pub timeout: Option<Duration>,
    pub env: Vec<(String, String)>,
}

impl ExecRequest {
    pub fn new(script: impl Into<String>) -> Self {
        Self {
            script: script.into(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutcome {
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
    pub stdout: String,
    pub stderr: String,
    pub timed_out: bool,
    pub elapsed: Duration,
    /// Whether kernel-level write confinement was in force.
    pub confined: bool,
}

impl ExecOutcome {
    pub fn success(&self) -> bool {
        self.exit_code == Some(0) && !self.timed_out
    }

    pub fn transcript(&self, script: &str) -> String {
        let status = match (self.timed_out, self.exit_code, self.signal) {
            (true, _, _) => format!("timed out after {:.2}s", self.elapsed.as_secs_f64()),
            (false, Some(c), _) => format!("exit {c}"),
            (false, None, Some(s)) => format!("killed by signal {s}"),
            (false, None, None) => "no status".into(),
        };
        let mut t = format!("$ {script}\n[{status}]\n");
        if !self.stdout.is_empty() {
            t.push_str("--- stdout\n");
            t.push_str(&self.stdout);
            if !self.stdout.ends_with('\n') {
                t.push('\n');
            }
        }
        if !self.stderr.is_empty() {
            t.push_str("--- stderr\n");
            t.push_str(&self.stderr);
            if !self.stderr.ends_with('\n') {
                t.push('\n');
            }
        }
        t
    }
}

fn read_capped(mut r: impl Read + Send + 'static) -> mpsc::Receiver<String> {
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut buf = [0u8; 8192];
        let mut dropped = 0usize;
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = OUTPUT_CAP.saturating_sub(kept.len());
                    kept.extend_from_slice(&buf[..n.min(room)]);
                    dropped += n.saturating_sub(room);
                }
            }
        }
        let mut s = String::from_utf8_lossy(&kept).into_owned();
        if dropped > 0 {
            s.push_str(&format!("\n[{dropped} bytes truncated]\n"));
        }
        let _ = tx.send(s);
    });
    rx
}

fn confinement(policy: &SandboxPolicy) -> Option<landlock::RulesetCreated> {
    use landlock::{
        path_beneath_rules, Access, AccessFs, AccessNet, Ruleset, RulesetAttr, RulesetCreatedAttr, ABI,
    };
    let fs_abi = ABI::V3;
    let mut rs = Ruleset::default().handle_access(AccessFs::from_all(fs_abi)).ok()?;
    if policy.network == Network::Denied {
        rs = rs.handle_access(AccessNet::from_all(ABI::V4)).ok()?;
    }
    rs.create()
        .ok()?
        .add_rules(path_beneath_rules(["/"], AccessFs::from_read(fs_abi)))
        .ok()?
        .add_rules(path_beneath_rules(["/dev/null"], AccessFs::from_all(fs_abi)))
        .ok()?
        .add_rules(path_beneath_rules([policy.workdir()], AccessFs::from_all(fs_abi)))
        .ok()
}

/// Whether the running kernel enforces Landlock write confinement.
pub fn confinement_supported() -> bool {
    static SUPPORTED: std::sync::OnceLock<bool> = std::sync::OnceLock::new();
    *SUPPORTED.get_or_init(|| {
        let Ok(dir) = std::env::current_dir() else { return false };
        let Ok(policy) = SandboxPolicy::new(&dir, Duration::from_secs(5), Network::Allowed) else {
            return false;
        };
        let out = run(&policy, &ExecRequest::new("true"));
        out.confined && out.success()
    })
}

/// Run `req.script` with `sh -c` under `policy`.
pub fn run(policy: &SandboxPolicy, req: &ExecRequest) -> ExecOutcome {
    let start = Instant::now();
    let limit = req
        .timeout
        .map_or(policy.wall_clock_limit, |t| t.min(policy.wall_clock_limit));
    let failed = |msg: String| ExecOutcome {
        exit_code: None,
        signal: None,
        stdout: String::new(),
        stderr: msg,
        timed_out: false,
        elapsed: start.elapsed(),
        confined: false,
    };
    let (home, tmp) = (policy.home(), policy.tmpdir());
    for d in [&home, &tmp] {
        if let Err(e) = std::fs::create_dir_all(d) {
            return failed(format!("cannot create {}: {e}", d.display()));
        }
    }
    let envdir = policy.workdir().join(META_DIR).join("envdir");
    let mut cmd = Command::new("sh");
    cmd.arg("-c")
        .arg(&req.script)
        .current_dir(req.cwd.as_deref().unwrap_or(policy.workdir()))
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    for name in &policy.env_allowlist {
        if let Some(v) = std::env::var_os(name) {
            cmd.env(name, v);
        }
    }
    let path = std::env::var("PATH").unwrap_or_else(|_| "/usr/local/bin:/usr/bin:/bin".into());
    cmd.env("PATH", format!("{}:{path}", envdir.join("bin").display()))
        .env("HOME", &home)
        .env("TMPDIR", &tmp)
        .env("AGENTIZER_ENVDIR", &envdir)
        .env("PYTHONPATH", envdir.join("site"))
        .env("PYTHONDONTWRITEBYTECODE", "1");
    for (k, v) in &req.env {
        cmd.env(k, v);
    }
    let mut ruleset = confinement(policy);
    let confined = ruleset.is_some();
    // SAFETY: the closure only issues the prctl/landlock syscalls through an
    // already-built ruleset; it does not touch locks held by other threads.
    unsafe {
        cmd.pre_exec(move || {
            if let Some(rs) = ruleset.take() {
                rs.restrict_self().map_err(|e| io::Error::other(e.to_string()))?;
            }
            Ok(())
        });
    }
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) => return failed(format!("cannot start sh: {e}")),
    };
    let out_rx = read_capped(child.stdout.take().expect("piped"));
    let err_rx = read_capped(child.stderr.take().expect("piped"));
    let pgid = child.id() as i32;
    let mut timed_out = false;
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break Some(s),
            Ok(None) if start.elapsed() >= limit => {
                timed_out = true;
                // SAFETY: signalling a process group we created.
                unsafe {
                    libc::killpg(pgid, libc::SIGKILL);
                }
                break child.wait().ok();
            }
            Ok(None) => thread::sleep(Duration::from_millis(2)),
            Err(_) => break None,
        }
    };
    // Leftover group members would keep the pipes open.
    // SAFETY: as above; ESRCH when the group is already gone is harmless.
    unsafe {
        libc::killpg(pgid, libc::SIGKILL);
    }
    let grace = Duration::from_millis(500);
    let stdout = out_rx.recv_timeout(grace).unwrap_or_default();
    let stderr = err_rx.recv_timeout(grace).unwrap_or_default();
    ExecOutcome {
        exit_code: status.and_then(|s| s.code()),
        signal: status.and_then(|s| s.signal()),
        stdout,
        stderr,
        timed_out,
        elapsed: start.elapsed(),
        confined,
    }
}
