//! Parsing the leader's structured replies.
//!
//! A Think reply must contain a plan block:
//!
//! ```text
//! action: dispatch
//! rationale: lr sweep stalled, try cosine schedule
//! task: code_agent | switch scheduler to cosine and launch exp with lr=3e-4
//! task: writing_agent | summarize the last three runs in reports/summary.md
//! ```
//!
//! A Reflect reply carries one decision and at most one milestone:
//!
//! ```text
//! milestone: Exp004: cosine, acc=77.9% --- new best!
//! decision: keep cosine, sweep warmup next
//! ```

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::roster::AgentKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanAction {
    Wait,
    Dispatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub worker: AgentKind,
    pub instruction: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclePlan {
    pub action: PlanAction,
    pub rationale: String,
    pub tasks: Vec<TaskSpec>,
}

impl CyclePlan {
    pub fn wait(rationale: impl Into<String>) -> Self {
        CyclePlan {
            action: PlanAction::Wait,
            rationale: rationale.into(),
            tasks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanParseError {
    #[error("no `action:` line found")]
    MissingAction,
    #[error("unknown action `{0}` (expected wait or dispatch)")]
    UnknownAction(String),
    #[error("task line `{0}` is not `task: <worker> | <instruction>`")]
    MalformedTask(String),
    #[error("`{0}` is not a worker (idea_agent, code_agent, writing_agent)")]
    NotAWorker(String),
    #[error("{count} tasks planned, at most {max} allowed per cycle")]
    TooManyTasks { count: usize, max: usize },
    #[error("a wait plan cannot carry tasks")]
    WaitWithTasks,
    #[error("a dispatch plan needs at least one task")]
    DispatchWithoutTasks,
}

/// Reminder sent with the single re-prompt after a parse failure.
pub const PLAN_FORMAT_REMINDER: &str = "Your reply could not be parsed as a plan. Reply with ONLY these lines:\n\
action: wait | dispatch\n\
rationale: <one line>\n\
task: <idea_agent|code_agent|writing_agent> | <instruction>   (one line per task, dispatch only)";

fn key_value(line: &str) -> Option<(String, &str)> {
    let line = line.trim().trim_start_matches(['-', '*']).trim();
    let (k, v) = line.split_once(':')?;
    let k = k.trim().trim_matches('*').trim().to_ascii_lowercase();
    if k.is_empty() || k.contains(' ') {
        return None;
    }
    Some((k, v.trim()))
}

pub fn parse_plan(reply: &str, max_tasks: usize) -> Result<CyclePlan, PlanParseError> {
    let mut action = None;
    let mut rationale = String::new();
    let mut tasks = Vec::new();
    for line in reply.lines() {
        let Some((key, value)) = key_value(line) else {
            continue;
        };
        match key.as_str() {
            "action" => {
                let v = value.trim_matches(['`', '"', '\'']).to_ascii_lowercase();
                action = Some(match v.as_str() {
                    "wait" => PlanAction::Wait,
                    "dispatch" => PlanAction::Dispatch,
                    _ => return Err(PlanParseError::UnknownAction(value.to_string())),
                });
            }
            "rationale" => rationale = value.to_string(),
            "task" => {
                let (worker, instruction) = value
                    .split_once('|')
                    .ok_or_else(|| PlanParseError::MalformedTask(line.trim().to_string()))?;
                let worker = worker.trim();
                let instruction = instruction.trim();
                if instruction.is_empty() {
                    return Err(PlanParseError::MalformedTask(line.trim().to_string()));
                }
                let kind: AgentKind = worker
                    .parse()
                    .map_err(|_| PlanParseError::NotAWorker(worker.to_string()))?;
                if !kind.is_worker() {
                    return Err(PlanParseError::NotAWorker(worker.to_string()));
                }
                tasks.push(TaskSpec {
                    worker: kind,
                    instruction: instruction.to_string(),
                });
            }
            _ => {}
        }
    }
    let action = action.ok_or(PlanParseError::MissingAction)?;
    match action {
        PlanAction::Wait if !tasks.is_empty() => return Err(PlanParseError::WaitWithTasks),
        PlanAction::Dispatch if tasks.is_empty() => return Err(PlanParseError::DispatchWithoutTasks),
        _ => {}
    }
    if tasks.len() > max_tasks {
        return Err(PlanParseError::TooManyTasks {
            count: tasks.len(),
            max: max_tasks,
        });
    }
    if rationale.is_empty() {
        rationale = "no rationale given".to_string();
    }
    Ok(CyclePlan {
        action,
        rationale,
        tasks,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reflection {
    pub milestone: Option<String>,
    pub decision: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("reflection reply is empty")]
pub struct EmptyReflection;

/// Missing `decision:` falls back to the first other non-empty line, so a
/// loosely formatted reply still yields the cycle's decision entry.
pub fn parse_reflection(reply: &str) -> Result<Reflection, EmptyReflection> {
    let mut milestone = None;
    let mut decision = None;
    let mut fallback = None;
    for line in reply.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with("```") {
            continue;
        }
        match key_value(trimmed) {
            Some((k, v)) if k == "milestone" => {
                let none = v.is_empty() || matches!(v.to_ascii_lowercase().as_str(), "none" | "-" | "n/a");
                if !none {
                    milestone = Some(v.to_string());
                }
            }
            Some((k, v)) if k == "decision" && !v.is_empty() => decision = Some(v.to_string()),
            _ => {
                if fallback.is_none() {
                    fallback = Some(trimmed.to_string());
                }
            }
        }
    }
    let decision = decision.or(fallback).ok_or(EmptyReflection)?;
    Ok(Reflection { milestone, decision })
}
