//! Append-only JSONL run log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use agentizer_core::node::Transition;
use agentizer_core::NodeState;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Timestamp source. The logical clock makes whole runs replayable.
#[derive(Debug)]
pub enum Clock {
    Wall,
    Logical(AtomicU64),
}

impl Clock {
    pub fn logical() -> Self {
        Clock::Logical(AtomicU64::new(0))
    }

    pub fn now(&self) -> String {
        match self {
            Clock::Wall => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
            Clock::Logical(n) => {
                let tick = n.fetch_add(1, Ordering::SeqCst);
                let t = chrono::DateTime::from_timestamp_micros(tick as i64).expect("small tick");
                t.to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Event {
    Created,
    Started,
    Done,
    Failed,
    Deferred,
    Retried,
    Gate,
    TrajectoryRetry,
}

impl Event {
    pub fn for_state(state: NodeState) -> Self {
        match state {
            NodeState::Pending => Event::Retried,
            NodeState::Running => Event::Started,
            NodeState::Done => Event::Done,
            NodeState::Failed => Event::Failed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct Record {
    pub timestamp: String,
    pub node_id: String,
    pub event: Event,
    #[serde(default)]
    pub detail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<String>,
}

pub struct RunLog {
    path: PathBuf,
    file: Mutex<File>,
    clock: Clock,
}

impl RunLog {
    pub fn open(path: &Path, clock: Clock) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.into(),
            file: Mutex::new(file),
            clock,
        })
    }

    pub fn clock(&self) -> &Clock {
        &self.clock
    }

    pub fn append(&self, trajectory: Option<&str>, node_id: &str, event: Event, detail: impl Into<String>) {
        // Timestamp under the lock so file order and time order agree.
        let mut f = self.file.lock().expect("run log lock");
        let rec = Record {
            timestamp: self.clock.now(),
            node_id: node_id.into(),
            event,
            detail: detail.into(),
            trajectory: trajectory.map(str::to_string),
        };
        let mut line = serde_json::to_string(&rec).expect("record serializes");
        line.push('\n');
        if let Err(e) = f.write_all(line.as_bytes()) {
            eprintln!("warning: run log {} not writable: {e}", self.path.display());
        }
    }

    pub fn transition(&self, trajectory: &str, t: &Transition, detail: impl Into<String>) {
        self.append(Some(trajectory), &t.node, Event::for_state(t.to), detail);
    }

    pub fn read(path: &Path) -> Result<Vec<Record>> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        BufReader::new(f)
            .lines()
            .map(|l| {
                let l = l.map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&l).map_err(|e| Error::Parse {
                    path: path.into(),
                    message: e.to_string(),
                })
            })
            .collect()
    }
}
