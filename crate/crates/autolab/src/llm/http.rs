//! Live backend for chat-completions style HTTP endpoints.

use std::time::Duration;

use autolab_core::roster::{Message, Role, ToolCall};
use serde_json::{json, Value};

use super::{BackendError, Completion, CompletionRequest, LlmBackend, ReportedUsage};

pub const BASE_URL_ENV: &str = "AUTOLAB_LLM_BASE_URL";
pub const API_KEY_ENV: &str = "AUTOLAB_LLM_API_KEY";

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: String,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: &str) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs(300)).build();
        HttpBackend {
            agent,
            url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key: api_key.to_string(),
        }
    }

    /// Base URL and key come only from the environment, never from config.
    pub fn from_env() -> Result<Self, BackendError> {
        let base = std::env::var(BASE_URL_ENV).map_err(|_| BackendError::NotConfigured(format!("{BASE_URL_ENV} unset")))?;
        let key = std::env::var(API_KEY_ENV).map_err(|_| BackendError::NotConfigured(format!("{API_KEY_ENV} unset")))?;
        Ok(HttpBackend::new(&base, &key))
    }
}

fn wire_message(m: &Message) -> Value {
    match m.role {
        Role::ToolResult => json!({
            "role": "tool",
            "tool_call_id": m.tool_call_id.clone().unwrap_or_default(),
            "content": m.content,
        }),
        Role::Assistant if !m.tool_calls.is_empty() => json!({
            "role": "assistant",
            "content": m.content,
            "tool_calls": m.tool_calls.iter().map(|c| json!({
                "id": c.id,
                "type": "function",
                "function": {"name": c.name, "arguments": c.arguments.to_string()},
            })).collect::<Vec<_>>(),
        }),
        Role::Assistant => json!({"role": "assistant", "content": m.content}),
        Role::User => json!({"role": "user", "content": m.content}),
        Role::System => json!({"role": "system", "content": m.content}),
    }
}

pub(crate) fn request_body(req: &CompletionRequest) -> Value {
    let mut messages = vec![json!({"role": "system", "content": req.system})];
    messages.extend(req.messages.iter().map(wire_message));
    let mut body = json!({"model": req.model, "messages": messages});
    if !req.tools.is_empty() {
        body["tools"] = req
            .tools
            .iter()
            .map(|t| {
                json!({
                    "type": "function",
                    "function": {
                        "name": t.name,
                        "description": t.description,
                        "parameters": t.parameters_json(),
                    }
                })
            })
            .collect();
    }
    body
}

pub(crate) fn parse_response(v: &Value) -> Result<Completion, BackendError> {
    let msg = v
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::InvalidResponse("no choices[0].message".into()))?;
    let content = msg.get("content").and_then(Value::as_str).unwrap_or("").to_string();
    let mut tool_calls = Vec::new();
    if let Some(calls) = msg.get("tool_calls").and_then(Value::as_array) {
        for (i, c) in calls.iter().enumerate() {
            let name = c
                .pointer("/function/name")
                .and_then(Value::as_str)
                .ok_or_else(|| BackendError::InvalidResponse("tool call without name".into()))?;
            let raw = c.pointer("/function/arguments").cloned().unwrap_or(Value::Null);
            let arguments = match raw {
                Value::String(s) if s.trim().is_empty() => json!({}),
                Value::String(s) => serde_json::from_str(&s)
                    .map_err(|e| BackendError::InvalidResponse(format!("tool arguments for {name}: {e}")))?,
                other => other,
            };
            let id = c
                .get("id")
                .and_then(Value::as_str)
                .map(str::to_string)
                .unwrap_or_else(|| format!("call_{i}"));
            tool_calls.push(ToolCall {
                id,
                name: name.to_string(),
                arguments,
            });
        }
    }
    let usage = ReportedUsage {
        input_tokens: v.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
        output_tokens: v.pointer("/usage/completion_tokens").and_then(Value::as_u64),
    };
    Ok(Completion {
        message: Message::assistant(content, tool_calls),
        usage,
    })
}

impl LlmBackend for HttpBackend {
    fn complete(&mut self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let resp = self
            .agent
            .post(&self.url)
            .set("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request_body(req));
        let resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(BackendError::Http {
                    status,
                    body: body.chars().take(500).collect(),
                });
            }
            Err(e) => return Err(BackendError::Transport(e.to_string())),
        };
        let v: Value = resp
            .into_json()
            .map_err(|e| BackendError::InvalidResponse(e.to_string()))?;
        parse_response(&v)
    }
}
