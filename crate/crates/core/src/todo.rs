//! Structured TODO list with append-only revisions.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::node::Goal;
use crate::planner::FollowupDraft;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TodoStatus {
    #[default]
    Open,
    Done,
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// `check-arg` names a workspace path that must exist and be non-empty.
    ArtifactExists,
    /// `check-arg` is a shell command that must exit 0.
    Command,
    /// The item's goal is in the environment's completed goals.
    #[default]
    GoalCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct CompletionCheck {
    pub kind: CheckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arg: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TodoItem {
    /// Same as the id of the follow-up goal the item tracks.
    pub id: String,
    pub text: String,
    pub status: TodoStatus,
    pub check_kind: CheckKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check_arg: Option<String>,
}

impl TodoItem {
    pub fn from_goal(goal: &Goal, check: Option<&CompletionCheck>) -> Self {
        let check = check.cloned().unwrap_or_default();
        Self {
            id: goal.id.clone(),
            text: goal.text.clone(),
            status: TodoStatus::Open,
            check_kind: check.kind,
            check_arg: check.arg,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TodoRevision {
    pub revision: u32,
    /// Id of the goal whose decomposition produced these items.
    pub goal: String,
    pub items: Vec<TodoItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TodoList {
    pub revisions: Vec<TodoRevision>,
}

impl TodoList {
    /// Append a revision for `parent`'s follow-ups. Earlier revisions stay.
    pub fn revise(&mut self, parent: &Goal, goals: &[Goal], drafts: &[FollowupDraft]) -> &TodoRevision {
        let items = goals
            .iter()
            .enumerate()
            .map(|(i, g)| TodoItem::from_goal(g, drafts.get(i).and_then(|d| d.check.as_ref())))
            .collect();
        let revision = self.revisions.len() as u32 + 1;
        self.revisions.push(TodoRevision {
            revision,
            goal: parent.id.clone(),
            items,
        });
        self.revisions.last().expect("just pushed")
    }

    /// Latest view of every item, in first-appearance order.
    pub fn current(&self) -> Vec<&TodoItem> {
        let mut order: Vec<&str> = Vec::new();
        let mut latest: BTreeMap<&str, &TodoItem> = BTreeMap::new();
        for rev in &self.revisions {
            for item in &rev.items {
                if latest.insert(item.id.as_str(), item).is_none() {
                    order.push(item.id.as_str());
                }
            }
        }
        order.into_iter().map(|id| latest[id]).collect()
    }

    pub fn item(&self, id: &str) -> Option<&TodoItem> {
        self.revisions
            .iter()
            .rev()
            .flat_map(|r| r.items.iter())
            .find(|i| i.id == id)
    }

    /// Update the status of the newest record of `id`.
    pub fn set_status(&mut self, id: &str, status: TodoStatus) -> bool {
        for rev in self.revisions.iter_mut().rev() {
            if let Some(item) = rev.items.iter_mut().find(|i| i.id == id) {
                item.status = status;
                return true;
            }
        }
        false
    }
}
