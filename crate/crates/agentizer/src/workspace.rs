//! On-disk layout of a workspace and its `.agentizer` metadata directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const META_DIR: &str = ".agentizer";

/// Directories never copied into a workspace or scanned as repo content.
pub const IGNORED_DIRS: &[&str] = &[META_DIR, ".git", "target", "node_modules", "__pycache__"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Open (and create the metadata tree of) a workspace rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let root = fs::canonicalize(root).map_err(|e| Error::io(root, e))?;
        let ws = Self { root };
        for dir in [ws.meta(), ws.trajectories_dir(), ws.transcripts_dir(), ws.envdir()] {
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(ws)
    }

    /// Workspace for `repo`. When `workspace` names a different directory the
    /// repo content is copied there first (existing files are overwritten,
    /// metadata is kept).
    pub fn prepare(repo: &Path, workspace: Option<&Path>) -> Result<Self> {
        if !repo.is_dir() {
            return Err(Error::Precondition(format!("{} is not a directory", repo.display())));
        }
        let repo = fs::canonicalize(repo).map_err(|e| Error::io(repo, e))?;
        let Some(target) = workspace else {
            return Self::open(&repo);
        };
        fs::create_dir_all(target).map_err(|e| Error::io(target, e))?;
        let target = fs::canonicalize(target).map_err(|e| Error::io(target, e))?;
        if target != repo {
            if target.starts_with(&repo) {
                return Err(Error::Usage("workspace must not be inside the repository".into()));
            }
            copy_tree(&repo, &target)?;
        }
        Self::open(&target)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn meta(&self) -> PathBuf {
        self.root.join(META_DIR)
    }

    pub fn trajectories_dir(&self) -> PathBuf {
        self.meta().join("trajectories")
    }

    pub fn trajectory(&self, id: &str) -> PathBuf {
        self.trajectories_dir().join(id)
    }

    pub fn trajectory_validation(&self, id: &str) -> PathBuf {
        self.trajectories_dir().join(format!("{id}.validation"))
    }

    pub fn trajectory_dot(&self, id: &str) -> PathBuf {
        self.trajectories_dir().join(format!("{id}.dot"))
    }

    pub fn transcripts_dir(&self) -> PathBuf {
        self.meta().join("transcripts")
    }

    pub fn transcript(&self, node: &str) -> PathBuf {
        self.transcripts_dir().join(format!("{node}.log"))
    }

    pub fn envdir(&self) -> PathBuf {
        self.meta().join("envdir")
    }

    pub fn run_log(&self) -> PathBuf {
        self.meta().join("run.log")
    }

    pub fn usage(&self) -> PathBuf {
        self.meta().join("usage.json")
    }

    pub fn env_state(&self) -> PathBuf {
        self.meta().join("env-state.json")
    }

    pub fn todo(&self) -> PathBuf {
        self.meta().join("todo.json")
    }

    pub fn tool_catalog(&self) -> PathBuf {
        self.meta().join("tools")
    }

    pub fn ckg(&self) -> PathBuf {
        self.meta().join("ckg")
    }

    pub fn usage_kb(&self) -> PathBuf {
        self.meta().join("usage-kb")
    }

    pub fn agent_card(&self) -> PathBuf {
        self.meta().join("agent-card")
    }

    pub fn service_log(&self) -> PathBuf {
        self.meta().join("service.log")
    }

    pub fn system_tests(&self) -> PathBuf {
        self.meta().join("system-tests")
    }

    pub fn inbox(&self) -> PathBuf {
        self.meta().join("inbox")
    }

    /// Workspace-relative form of `path` (unchanged when outside).
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    /// Ids of the stored trajectories, sorted.
    pub fn trajectory_ids(&self) -> Result<Vec<String>> {
        let dir = self.trajectories_dir();
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))? {
            let name = entry.map_err(|e| Error::io(&dir, e))?.file_name();
            let name = name.to_string_lossy();
            if !name.contains('.') {
                ids.push(name.into_owned());
            }
        }
        ids.sort();
        Ok(ids)
    }
}

/// Canonical document form: pretty JSON with a trailing newline.
pub fn to_document<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}

/// Write via a temporary sibling and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_doc<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_document(value).as_bytes())
}

pub fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}

fn copy_tree(from: &Path, to: &Path) -> Result<()> {
    let walker = walkdir::WalkDir::new(from)
        .sort_by_file_name()
        .into_iter()
        .filter_entry(|e| e.depth() == 0 || !IGNORED_DIRS.contains(&e.file_name().to_string_lossy().as_ref()));
    for entry in walker {
        let entry = entry.map_err(|e| Error::Other(e.to_string()))?;
        let rel = entry.path().strip_prefix(from).expect("walk stays under root");
        let dest = to.join(rel);
        let ft = entry.file_type();
        if ft.is_dir() {
            fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
        } else if ft.is_file() {
            fs::copy(entry.path(), &dest).map_err(|e| Error::io(&dest, e))?;
        } else if ft.is_symlink() {
            let target = fs::read_link(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            let _ = fs::remove_file(&dest);
            std::os::unix::fs::symlink(&target, &dest).map_err(|e| Error::io(&dest, e))?;
        }
    }
    Ok(())
}
