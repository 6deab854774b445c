//! `todo-verify`: run an item's completion check and mark it done.

use agentizer_core::todo::{CheckKind, TodoItem, TodoStatus};
use agentizer_core::ContextKind;

use super::ArgType as A;
use super::{nonempty, str_arg, Args, Tool, ToolContext, ToolErrorKind, ToolResult, ToolSpec};
use crate::sandbox::{self, ExecRequest};

/// `Ok(())` when the item's check holds, otherwise why not.
pub fn verify_item(item: &TodoItem, cx: &ToolContext<'_>) -> Result<(), String> {
    match item.check_kind {
        CheckKind::ArtifactExists => {
            let arg = item.check_arg.as_deref().ok_or("artifact check without a path")?;
            let path = cx.policy.resolve(arg).map_err(|e| e.to_string())?;
            if nonempty(&path) {
                Ok(())
            } else {
                Err(format!("{arg} is missing or empty"))
            }
        }
        CheckKind::Command => {
            let arg = item.check_arg.as_deref().ok_or("command check without a command")?;
            let out = sandbox::run(cx.policy, &ExecRequest::new(arg));
            if out.success() {
                Ok(())
            } else {
                Err(out.transcript(arg))
            }
        }
        CheckKind::GoalCompleted => {
            let env = cx.env.ok_or("no environment state to consult")?;
            if env.lock().expect("env lock").completed_goals.contains(&item.id) {
                Ok(())
            } else {
                Err(format!("goal {} is not completed", item.id))
            }
        }
    }
}

pub struct TodoVerify;

impl Tool for TodoVerify {
    fn spec(&self) -> ToolSpec {
        ToolSpec::new("todo-verify", "Check a TODO item's completion condition.", false).arg("id", A::String, true)
    }

    fn run(&self, args: &Args, cx: &ToolContext<'_>) -> ToolResult {
        let id = str_arg(args, "id").unwrap_or_default();
        let Some(todo) = cx.todo else {
            return ToolResult::failure(ToolErrorKind::Precondition, "no TODO list in this run");
        };
        let item = todo.lock().expect("todo lock").item(id).cloned();
        let Some(item) = item else {
            return ToolResult::failure(ToolErrorKind::Precondition, format!("unknown TODO item {id}"));
        };
        match verify_item(&item, cx) {
            Ok(()) => {
                todo.lock().expect("todo lock").set_status(id, TodoStatus::Done);
                ToolResult::success().with_item(ContextKind::DocSlice, format!("todo {id} ({}) verified", item.text))
            }
            Err(why) => {
                let mut r = ToolResult::failure(ToolErrorKind::ExecutionFailed, format!("todo {id} not satisfied: {why}"));
                r.retryable = true;
                r
            }
        }
    }
}
