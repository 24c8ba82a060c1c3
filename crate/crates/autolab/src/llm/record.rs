//! Wraps a live backend and writes each exchange out as a mock fixture.

use std::path::{Path, PathBuf};

use super::mock::{FixtureEntry, FixtureToolCall, FixtureUsage};
use super::{BackendError, Completion, CompletionRequest, LlmBackend};
use crate::fsutil::atomic_write;

pub const RECORD_ENV: &str = "AUTOLAB_RECORD_FIXTURE";

const EXPECT_CHARS: usize = 60;

pub struct RecordingBackend {
    inner: Box<dyn LlmBackend>,
    path: PathBuf,
    entries: Vec<FixtureEntry>,
}

impl RecordingBackend {
    pub fn new(inner: Box<dyn LlmBackend>, path: &Path) -> Self {
        RecordingBackend {
            inner,
            path: path.to_path_buf(),
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[FixtureEntry] {
        &self.entries
    }
}

/// The matcher for a recorded request: the first line of its last message.
fn expect_for(req: &CompletionRequest) -> Option<String> {
    let last = req.messages.last()?;
    let line = last.content.lines().find(|l| !l.trim().is_empty())?;
    Some(line.chars().take(EXPECT_CHARS).collect())
}

impl LlmBackend for RecordingBackend {
    fn complete(&mut self, req: &CompletionRequest) -> Result<Completion, BackendError> {
        let c = self.inner.complete(req)?;
        self.entries.push(FixtureEntry {
            name: Some(format!("call-{}", self.entries.len() + 1)),
            system_contains: req.system.lines().next().map(|l| l.chars().take(EXPECT_CHARS).collect()),
            expect: expect_for(req),
            reply: c.message.content.clone(),
            tool_calls: c
                .message
                .tool_calls
                .iter()
                .map(|t| FixtureToolCall {
                    name: t.name.clone(),
                    arguments: t.arguments.clone(),
                })
                .collect(),
            usage: Some(FixtureUsage {
                input_tokens: c.usage.input_tokens,
                output_tokens: c.usage.output_tokens,
            }),
        });
        let yaml = serde_yaml::to_string(&self.entries).expect("fixture serializes");
        if let Err(e) = atomic_write(&self.path, yaml.as_bytes()) {
            log::warn!("cannot write fixture {}: {e}", self.path.display());
        }
        Ok(c)
    }
}
