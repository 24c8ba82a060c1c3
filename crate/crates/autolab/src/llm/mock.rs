//! Scripted fixture playback.
//!
//! A fixture is a YAML list of entries. Each request is answered by the
//! first not-yet-used entry whose matchers all hold:
//!
//! ```yaml
//! - name: cycle1-think
//!   system_contains: "leader"        # substring of the system prompt
//!   expect: "## Think"               # substring of the last message
//!   reply: |
//!     action: wait
//!     rationale: GPU busy
//!   usage: {input_tokens: 3750, output_tokens: 180}
//! - name: code-launch
//!   expect: "launch"
//!   tool_calls:
//!     - name: launch_experiment
//!       arguments: {command: ["sh", "train.sh"]}
//! ```
//!
//! Entries without `usage` are accounted by the gateway's estimator.

use std::path::Path;
use std::sync::{Arc, Mutex};

use autolab_core::roster::{Message, ToolCall};
use serde::{Deserialize, Serialize};

use super::{BackendError, Completion, CompletionRequest, LlmBackend, ReportedUsage};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureUsage {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureToolCall {
    pub name: String,
    #[serde(default)]
    pub arguments: serde_json::Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<String>,
    #[serde(default)]
    pub reply: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<FixtureToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<FixtureUsage>,
}

impl FixtureEntry {
    fn matches(&self, req: &CompletionRequest) -> bool {
        if let Some(s) = &self.system_contains {
            if !req.system.contains(s.as_str()) {
                return false;
            }
        }
        if let Some(e) = &self.expect {
            let last = req.messages.last().map(|m| m.content.as_str()).unwrap_or("");
            if !last.contains(e.as_str()) {
                return false;
            }
        }
        true
    }
}

/// Shared view of every request the mock has received, in order.
#[derive(Debug, Clone, Default)]
pub struct RequestLog(Arc<Mutex<Vec<CompletionRequest>>>);

impl RequestLog {
    pub fn requests(&self) -> Vec<CompletionRequest> {
        self.0.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct MockBackend {
    entries: Vec<FixtureEntry>,
    used: Vec<bool>,
    log: RequestLog,
    next_call_id: u64,
}

impl MockBackend {
    pub fn new(entries: Vec<FixtureEntry>) -> Self {
        let used = vec![false; entries.len()];
        MockBackend {
            entries,
            used,
            log: RequestLog::default(),
            next_call_id: 0,
        }
    }

    pub fn from_yaml(text: &str) -> Result<Self, BackendError> {
        let entries: Vec<FixtureEntry> =
            serde_yaml::from_str(text).map_err(|e| BackendError::NotConfigured(format!("bad fixture: {e}")))?;
        Ok(MockBackend::new(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::NotConfigured(format!("{}: {e}", path.display())))?;
        Self::from_yaml(&text)
    }

    pub fn request_log(&self) -> RequestLog {
        self.log.clone()
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }
}

impl LlmBackend for MockBackend {
    fn complete(&mut self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let request = {
            let mut g = self.log.0.lock().unwrap();
            g.push(req.clone());
            g.len()
        };
        let idx = (0..self.entries.len())
            .find(|&i| !self.used[i] && self.entries[i].matches(req))
            .ok_or_else(|| BackendError::FixtureMismatch {
                request,
                last_message: req
                    .messages
                    .last()
                    .map(|m| m.content.chars().take(200).collect())
                    .unwrap_or_default(),
            })?;
        self.used[idx] = true;
        let e = &self.entries[idx];
        let tool_calls = e
            .tool_calls
            .iter()
            .map(|c| {
                self.next_call_id += 1;
                ToolCall {
                    id: format!("call_{}", self.next_call_id),
                    name: c.name.clone(),
                    arguments: c.arguments.clone(),
                }
            })
            .collect();
        let usage = e.usage.clone().unwrap_or_default();
        Ok(Completion {
            message: Message::assistant(e.reply.clone(), tool_calls),
            usage: ReportedUsage {
                input_tokens: usage.input_tokens,
                output_tokens: usage.output_tokens,
            },
        })
    }
}
