//! Two-tier constant-size memory.
//!
//! Tier 1 is the human-authored [`ProjectBrief`], frozen for the run. Tier 2
//! is the agent-maintained [`MemoryLog`] with two sections: key results
//! (milestones, evicted oldest-first once the section exceeds its character
//! cap) and recent decisions (count-capped, plus character eviction so the
//! whole log never exceeds its cap). Every length here is the rendered
//! length in Unicode scalar values, headers and newlines included.
//!
//! Rendered layout, also the on-disk `MEMORY_LOG.md` format:
//!
//! ```text
//! ## Key Results
//! [cycle 12 | 2026-04-07T14:30:00Z] Exp003: lr=3e-4 + cosine, acc=77.9% --- new best!
//! ## Recent Decisions
//! [cycle 13 | 2026-04-07T18:02:11Z] try warmup 5 epochs next
//! ```

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Timelike, Utc};
use sha2::{Digest, Sha256};

use crate::text::{char_len, truncate_with_ellipsis};

pub const KEY_RESULTS_HEADER: &str = "## Key Results\n";
pub const DECISIONS_HEADER: &str = "## Recent Decisions\n";

/// Smallest per-entry line budget a configuration may leave for either
/// section; large enough for the `[cycle N | timestamp] ` prefix plus text.
pub const MIN_ENTRY_BUDGET: usize = 64;

/// `[cycle ` + ` | ` + 20-char timestamp + `] `
const LINE_PREFIX_FIXED: usize = 7 + 3 + 20 + 2;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MemoryError {
    #[error("memory entry text is empty")]
    EmptyEntry,
    #[error("memory entries must be a single line")]
    MultiLine,
    #[error("entry renders to {len} chars, more than the {cap}-char key-results section allows")]
    EntryTooLarge { len: usize, cap: usize },
    #[error("project brief is {len} chars, over the {cap}-char limit")]
    BriefTooLarge { len: usize, cap: usize },
    #[error("project brief is empty")]
    BriefEmpty,
    #[error("project brief content changed during the run")]
    BriefTampered,
}

/// Tier 1: frozen research brief.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectBrief {
    content: String,
    content_hash: String,
    source_path: String,
}

impl ProjectBrief {
    /// Trailing whitespace is normalized to a single newline before the cap
    /// is checked, so `brief + log` can be concatenated without a separator.
    pub fn new(content: &str, source_path: &str, max_chars: usize) -> Result<Self, MemoryError> {
        let body = content.trim_end();
        if body.trim().is_empty() {
            return Err(MemoryError::BriefEmpty);
        }
        let mut normalized = String::with_capacity(body.len() + 1);
        normalized.push_str(body);
        normalized.push('\n');
        let len = char_len(&normalized);
        if len > max_chars {
            return Err(MemoryError::BriefTooLarge { len, cap: max_chars });
        }
        let content_hash = sha256_hex(normalized.as_bytes());
        Ok(ProjectBrief {
            content: normalized,
            content_hash,
            source_path: source_path.to_string(),
        })
    }

    pub fn content(&self) -> &str {
        &self.content
    }

    pub fn content_hash(&self) -> &str {
        &self.content_hash
    }

    pub fn source_path(&self) -> &str {
        &self.source_path
    }

    pub fn chars(&self) -> usize {
        char_len(&self.content)
    }

    /// Re-hash the content and compare with the hash taken at load.
    pub fn verify(&self) -> Result<(), MemoryError> {
        if sha256_hex(self.content.as_bytes()) == self.content_hash {
            Ok(())
        } else {
            Err(MemoryError::BriefTampered)
        }
    }

    /// True if `other_content` (e.g. the file re-read from disk) matches.
    pub fn matches(&self, other_content: &str) -> bool {
        let body = other_content.trim_end();
        let mut normalized = String::from(body);
        normalized.push('\n');
        sha256_hex(normalized.as_bytes()) == self.content_hash
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// One line in either tier-2 section.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub cycle: u64,
    text: String,
    recorded_at: DateTime<Utc>,
}

pub type MilestoneEntry = LogEntry;
pub type DecisionEntry = LogEntry;

impl LogEntry {
    /// Text is trimmed; timestamps are kept at whole-second precision so the
    /// rendered form round-trips.
    pub fn new(cycle: u64, text: &str, recorded_at: DateTime<Utc>) -> Result<Self, MemoryError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(MemoryError::EmptyEntry);
        }
        if text.contains(['\n', '\r']) {
            return Err(MemoryError::MultiLine);
        }
        Ok(LogEntry {
            cycle,
            text: text.to_string(),
            recorded_at: recorded_at.with_nanosecond(0).unwrap_or(recorded_at),
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn recorded_at(&self) -> DateTime<Utc> {
        self.recorded_at
    }

    /// Length of the rendered line, newline excluded.
    pub fn line_chars(&self) -> usize {
        LINE_PREFIX_FIXED + decimal_digits(self.cycle) + char_len(&self.text)
    }

    pub fn render_line(&self) -> String {
        format!(
            "[cycle {} | {}] {}",
            self.cycle,
            self.recorded_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            self.text
        )
    }

    /// Inverse of [`render_line`](Self::render_line).
    pub fn parse_line(line: &str) -> Option<LogEntry> {
        let rest = line.trim_end().strip_prefix("[cycle ")?;
        let (cycle, rest) = rest.split_once(" | ")?;
        let (stamp, text) = rest.split_once("] ")?;
        let cycle: u64 = cycle.trim().parse().ok()?;
        let at = DateTime::parse_from_rfc3339(stamp.trim()).ok()?.with_timezone(&Utc);
        LogEntry::new(cycle, text, at).ok()
    }

    fn with_text_budget(mut self, max_line_chars: usize) -> (Self, bool) {
        let line = self.line_chars();
        if line <= max_line_chars {
            return (self, false);
        }
        let text_budget = max_line_chars.saturating_sub(line - char_len(&self.text)).max(1);
        self.text = truncate_with_ellipsis(&self.text, text_budget);
        (self, true)
    }
}

fn decimal_digits(mut n: u64) -> usize {
    let mut d = 1;
    while n >= 10 {
        n /= 10;
        d += 1;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogCaps {
    pub log_max_chars: usize,
    pub milestone_max_chars: usize,
    pub max_recent_entries: usize,
}

impl Default for LogCaps {
    fn default() -> Self {
        LogCaps {
            log_max_chars: 2000,
            milestone_max_chars: 1200,
            max_recent_entries: 15,
        }
    }
}

impl LogCaps {
    /// Longest decision line (newline excluded) that always fits next to a
    /// full key-results section.
    pub fn decision_line_budget(&self) -> usize {
        self.log_max_chars
            .saturating_sub(self.milestone_max_chars)
            .saturating_sub(DECISIONS_HEADER.len())
            .saturating_sub(1)
    }

    /// Longest milestone line (newline excluded) accepted at all.
    pub fn milestone_line_budget(&self) -> usize {
        self.milestone_max_chars
            .saturating_sub(KEY_RESULTS_HEADER.len())
            .saturating_sub(1)
    }
}

/// What an append had to throw away.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Compaction {
    pub evicted_key_results: usize,
    pub evicted_decisions: usize,
    /// The appended decision text was shortened to fit its line budget.
    pub truncated: bool,
}

/// Tier 2: rolling log.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryLog {
    key_results: VecDeque<LogEntry>,
    recent_decisions: VecDeque<LogEntry>,
    caps: LogCaps,
    // rendered chars of each section's entry lines, newlines included
    key_results_lines: usize,
    decisions_lines: usize,
}

impl MemoryLog {
    pub fn new(caps: LogCaps) -> Self {
        MemoryLog {
            key_results: VecDeque::new(),
            recent_decisions: VecDeque::new(),
            caps,
            key_results_lines: 0,
            decisions_lines: 0,
        }
    }

    pub fn caps(&self) -> LogCaps {
        self.caps
    }

    pub fn key_results(&self) -> impl ExactSizeIterator<Item = &LogEntry> + DoubleEndedIterator {
        self.key_results.iter()
    }

    pub fn recent_decisions(&self) -> impl ExactSizeIterator<Item = &LogEntry> + DoubleEndedIterator {
        self.recent_decisions.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.key_results.is_empty() && self.recent_decisions.is_empty()
    }

    /// Rendered length of the key-results section, header included.
    pub fn key_results_chars(&self) -> usize {
        KEY_RESULTS_HEADER.len() + self.key_results_lines
    }

    /// Rendered length of the decisions section, header included.
    pub fn decisions_chars(&self) -> usize {
        DECISIONS_HEADER.len() + self.decisions_lines
    }

    pub fn rendered_chars(&self) -> usize {
        self.key_results_chars() + self.decisions_chars()
    }

    pub fn render(&self) -> String {
        let mut out = String::with_capacity(self.rendered_chars() + 64);
        out.push_str(KEY_RESULTS_HEADER);
        for e in &self.key_results {
            out.push_str(&e.render_line());
            out.push('\n');
        }
        out.push_str(DECISIONS_HEADER);
        for e in &self.recent_decisions {
            out.push_str(&e.render_line());
            out.push('\n');
        }
        out
    }

    /// Append a milestone, evicting the oldest milestones until the section
    /// fits. The new entry always survives.
    pub fn append_key_result(&mut self, entry: MilestoneEntry) -> Result<Compaction, MemoryError> {
        let line = entry.line_chars();
        if line > self.caps.milestone_line_budget() {
            return Err(MemoryError::EntryTooLarge {
                len: KEY_RESULTS_HEADER.len() + line + 1,
                cap: self.caps.milestone_max_chars,
            });
        }
        self.key_results_lines += line + 1;
        self.key_results.push_back(entry);

        let mut c = Compaction::default();
        while self.key_results_chars() > self.caps.milestone_max_chars && self.key_results.len() > 1 {
            let old = self.key_results.pop_front().expect("len > 1");
            self.key_results_lines -= old.line_chars() + 1;
            c.evicted_key_results += 1;
        }
        c.evicted_decisions = self.enforce_total();
        Ok(c)
    }

    /// Append a decision, keep only the newest `max_recent_entries`, then
    /// evict further oldest decisions while the whole log is over its cap.
    /// Text too long to ever fit is shortened with an ellipsis.
    pub fn append_decision(&mut self, entry: DecisionEntry) -> Compaction {
        let (entry, truncated) = entry.with_text_budget(self.caps.decision_line_budget());
        self.decisions_lines += entry.line_chars() + 1;
        self.recent_decisions.push_back(entry);

        let mut c = Compaction {
            truncated,
            ..Compaction::default()
        };
        while self.recent_decisions.len() > self.caps.max_recent_entries {
            self.pop_decision();
            c.evicted_decisions += 1;
        }
        c.evicted_decisions += self.enforce_total();
        c
    }

    fn pop_decision(&mut self) {
        if let Some(old) = self.recent_decisions.pop_front() {
            self.decisions_lines -= old.line_chars() + 1;
        }
    }

    fn enforce_total(&mut self) -> usize {
        let mut evicted = 0;
        while self.rendered_chars() > self.caps.log_max_chars && self.recent_decisions.len() > 1 {
            self.pop_decision();
            evicted += 1;
        }
        evicted
    }

    /// Parse the on-disk format. Malformed lines (and milestones too large
    /// for their section) are returned separately instead of failing the
    /// whole load; caps are re-applied, since the file may be hand-edited.
    pub fn parse(text: &str, caps: LogCaps) -> ParsedLog {
        #[derive(PartialEq)]
        enum Section {
            None,
            KeyResults,
            Decisions,
        }
        let mut log = MemoryLog::new(caps);
        let mut quarantined = Vec::new();
        let mut section = Section::None;
        for raw in text.lines() {
            let line = raw.trim_end();
            if line.trim().is_empty() {
                continue;
            }
            if line.trim() == KEY_RESULTS_HEADER.trim_end() {
                section = Section::KeyResults;
                continue;
            }
            if line.trim() == DECISIONS_HEADER.trim_end() {
                section = Section::Decisions;
                continue;
            }
            if section == Section::None && line.starts_with("# ") {
                // optional document title
                continue;
            }
            let parsed = match section {
                Section::None => None,
                _ => LogEntry::parse_line(line),
            };
            match (parsed, &section) {
                (Some(e), Section::KeyResults) => {
                    if log.append_key_result(e).is_err() {
                        quarantined.push(line.to_string());
                    }
                }
                (Some(e), Section::Decisions) => {
                    log.append_decision(e);
                }
                _ => quarantined.push(line.to_string()),
            }
        }
        ParsedLog { log, quarantined }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedLog {
    pub log: MemoryLog,
    pub quarantined: Vec<String>,
}

/// The prompt-ready memory: brief followed by the rendered log. Bounded by
/// `brief_max_chars + log_max_chars`.
pub fn render_memory(brief: &ProjectBrief, log: &MemoryLog) -> String {
    let mut out = String::with_capacity(brief.content().len() + log.rendered_chars() + 64);
    out.push_str(brief.content());
    out.push_str(&log.render());
    out
}
