//! Human directive naming and validation rules.

use alloc::format;
use alloc::string::{String, ToString};

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::text::{char_len, truncate_with_ellipsis};

pub const DIRECTIVE_FILE: &str = "HUMAN_DIRECTIVE.md";
pub const ARCHIVE_DIR: &str = "directive_archive";
pub const MAX_DIRECTIVE_CHARS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectiveSource {
    File,
    Cli,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Directive {
    pub text: String,
    pub source: DirectiveSource,
    pub received_at: DateTime<Utc>,
    /// Workspace-relative archive path, for file directives.
    pub archive_path: Option<String>,
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DirectiveError {
    #[error("directive text is empty")]
    Empty,
}

/// Trim and size-check directive text. Over-long text is cut to
/// [`MAX_DIRECTIVE_CHARS`]; the flag reports whether that happened.
pub fn normalize_directive(text: &str) -> Result<(String, bool), DirectiveError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(DirectiveError::Empty);
    }
    if char_len(t) > MAX_DIRECTIVE_CHARS {
        return Ok((truncate_with_ellipsis(t, MAX_DIRECTIVE_CHARS), true));
    }
    Ok((t.to_string(), false))
}

/// `directive_YYYYMMDD_HHMMSS.md`, with `_2`, `_3`, ... for same-second
/// collisions (`attempt` starts at 1).
pub fn archive_file_name(local: NaiveDateTime, attempt: u32) -> String {
    let stamp = local.format("%Y%m%d_%H%M%S");
    if attempt <= 1 {
        format!("directive_{stamp}.md")
    } else {
        format!("directive_{stamp}_{attempt}.md")
    }
}

/// Prompt block placed at the top of the Think input.
pub fn render_directive_block(d: &Directive) -> String {
    let source = match d.source {
        DirectiveSource::File => "HUMAN_DIRECTIVE.md",
        DirectiveSource::Cli => "--directive",
    };
    format!(
        "### HUMAN DIRECTIVE (highest priority, from {source})\n<<<DIRECTIVE\n{}\nDIRECTIVE>>>\nFollow this directive over any plan suggested by memory.\n",
        d.text
    )
}
