//! LLM access: the backend interface, the gateway that retries and
//! accounts every call, and three backends (scripted mock, live HTTP,
//! recording wrapper).
//!
//! The gateway only accepts [`LlmPhase`], which has no monitoring variant,
//! so nothing can bill an LLM call to the monitor phase.

mod http;
mod mock;
mod record;

pub use http::HttpBackend;
pub use mock::{FixtureEntry, FixtureToolCall, FixtureUsage, MockBackend, RequestLog};
pub use record::{RecordingBackend, RECORD_ENV};
pub use http::{API_KEY_ENV, BASE_URL_ENV};

use std::sync::Arc;
use std::time::Duration;

use autolab_core::backoff::RETRY_DELAYS_SECS;
use autolab_core::cost::{overhead_tokens, CostLedger, LlmPhase, Usage};
use autolab_core::memory::sha256_hex;
use autolab_core::roster::{AgentKind, Message, ToolSchema};
use autolab_core::text::estimate_tokens;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;

pub const MOCK_ENV: &str = "AUTOLAB_MOCK_FIXTURE";

/// Pick the backend from the environment: a mock fixture if set, else the
/// HTTP endpoint, optionally wrapped to record a fixture.
pub fn backend_from_env() -> Result<Box<dyn LlmBackend>, BackendError> {
    if let Ok(path) = std::env::var(MOCK_ENV) {
        return Ok(Box::new(MockBackend::from_file(std::path::Path::new(&path))?));
    }
    let http: Box<dyn LlmBackend> = Box::new(HttpBackend::from_env()?);
    Ok(match std::env::var(RECORD_ENV) {
        Ok(path) => Box::new(RecordingBackend::new(http, std::path::Path::new(&path))),
        Err(_) => http,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system: String,
    pub messages: Vec<Message>,
    pub tools: Vec<ToolSchema>,
    pub model: String,
}

/// Token counts as reported by a provider. Absent fields are estimated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportedUsage {
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub message: Message,
    pub usage: ReportedUsage,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unparseable response: {0}")]
    InvalidResponse(String),
    #[error("no fixture entry matches request #{request} (last message: {last_message:?})")]
    FixtureMismatch { request: usize, last_message: String },
    #[error("backend not configured: {0}")]
    NotConfigured(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait LlmBackend: Send {
    fn complete(&mut self, req: &CompletionRequest) -> Result<Completion, BackendError>;
}

/// One accounted call, kept for audits (allowlist soundness, call ordering).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub seq: u64,
    pub phase: LlmPhase,
    pub agent: AgentKind,
    pub tools: Vec<String>,
    pub usage: Usage,
    pub cache_hit: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("LLM backend failed after {attempts} attempt(s): {last}")]
    Backend { attempts: usize, last: BackendError },
}

impl GatewayError {
    pub fn backend_error(&self) -> &BackendError {
        match self {
            GatewayError::Backend { last, .. } => last,
        }
    }
}

pub struct Gateway {
    backend: Box<dyn LlmBackend>,
    clock: Arc<dyn Clock>,
    retry_delays: Vec<Duration>,
    last_prefix: Option<String>,
    calls: Vec<CallRecord>,
}

impl Gateway {
    pub fn new(backend: Box<dyn LlmBackend>, clock: Arc<dyn Clock>) -> Self {
        Gateway {
            backend,
            clock,
            retry_delays: RETRY_DELAYS_SECS.iter().map(|s| Duration::from_secs(*s)).collect(),
            last_prefix: None,
            calls: Vec::new(),
        }
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    /// Make one call. Retryable failures are retried after each configured
    /// delay; only a successful call reaches the ledger.
    #[allow(clippy::too_many_arguments)]
    pub fn call(
        &mut self,
        phase: LlmPhase,
        agent: AgentKind,
        model: &str,
        system: &str,
        messages: &[Message],
        tools: &[ToolSchema],
        ledger: &mut CostLedger,
    ) -> Result<Message, GatewayError> {
        let req = CompletionRequest {
            system: system.to_string(),
            messages: messages.to_vec(),
            tools: tools.to_vec(),
            model: model.to_string(),
        };
        let mut attempt = 0;
        let completion = loop {
            attempt += 1;
            match self.backend.complete(&req) {
                Ok(c) => break c,
                Err(e) if e.is_retryable() && attempt <= self.retry_delays.len() => {
                    let delay = self.retry_delays[attempt - 1];
                    log::warn!("LLM call failed ({e}); retry {attempt} in {}s", delay.as_secs());
                    self.clock.sleep(delay, &|| false);
                }
                Err(last) => {
                    return Err(GatewayError::Backend {
                        attempts: attempt,
                        last,
                    })
                }
            }
        };

        let digest = prefix_digest(system, tools);
        let cache_hit = self.last_prefix.as_deref() == Some(digest.as_str());
        self.last_prefix = Some(digest);
        let usage = account(&req, &completion, cache_hit);
        ledger.record(phase, &usage);
        self.calls.push(CallRecord {
            seq: self.calls.len() as u64,
            phase,
            agent,
            tools: tools.iter().map(|t| t.name.clone()).collect(),
            usage,
            cache_hit,
        });
        Ok(completion.message)
    }
}

/// Digest of the cacheable prompt prefix: system prompt plus tool schemas.
pub fn prefix_digest(system: &str, tools: &[ToolSchema]) -> String {
    let tools_json = serde_json::to_string(tools).expect("schemas serialize");
    let mut buf = String::with_capacity(system.len() + tools_json.len() + 1);
    buf.push_str(system);
    buf.push('\u{0}');
    buf.push_str(&tools_json);
    sha256_hex(buf.as_bytes())
}

fn message_tokens(m: &Message) -> u64 {
    let args: u64 = m
        .tool_calls
        .iter()
        .map(|c| estimate_tokens(&c.name) + estimate_tokens(&c.arguments.to_string()))
        .sum();
    estimate_tokens(&m.content) + args
}

/// Usage for one call: provider counts when reported, otherwise the
/// chars/4 estimate. Tool overhead and the cache credit follow the local
/// model regardless of provider.
pub fn account(req: &CompletionRequest, c: &Completion, cache_hit: bool) -> Usage {
    let overhead = overhead_tokens(&req.tools);
    let prefix = estimate_tokens(&req.system) + overhead;
    let input = c.usage.input_tokens.unwrap_or_else(|| {
        prefix + req.messages.iter().map(message_tokens).sum::<u64>()
    });
    let output = c.usage.output_tokens.unwrap_or_else(|| message_tokens(&c.message));
    Usage {
        input_tokens: input,
        output_tokens: output,
        cached_input_tokens: if cache_hit { prefix.min(input) } else { 0 },
        tool_overhead_tokens: overhead,
    }
}
