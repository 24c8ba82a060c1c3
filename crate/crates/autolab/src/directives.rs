//! The human override channel: `HUMAN_DIRECTIVE.md` consumed at cycle
//! start and archived, plus a one-slot queue for `--directive`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use autolab_core::directive::{
    archive_file_name, normalize_directive, Directive, DirectiveError, DirectiveSource, ARCHIVE_DIR, DIRECTIVE_FILE,
};

use crate::clock::Clock;

#[derive(Debug, thiserror::Error)]
pub enum InboxError {
    #[error("a CLI directive is already queued; wait for the next cycle")]
    QueueOccupied,
    #[error("a directive is already pending in {0}")]
    Pending(String),
    #[error(transparent)]
    Invalid(#[from] DirectiveError),
    #[error("directive file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> InboxError + '_ {
    move |source| InboxError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-daemon directive state. The CLI slot lives only in memory, so a
/// restart drops it.
#[derive(Debug, Default)]
pub struct DirectiveInbox {
    pending_cli: Option<String>,
}

impl DirectiveInbox {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn inject_cli(&mut self, text: &str) -> Result<(), InboxError> {
        if self.pending_cli.is_some() {
            return Err(InboxError::QueueOccupied);
        }
        normalize_directive(text)?;
        self.pending_cli = Some(text.to_string());
        Ok(())
    }

    pub fn cli_pending(&self) -> bool {
        self.pending_cli.is_some()
    }

    /// Called once per cycle before Think. A file directive wins; a queued
    /// CLI directive then waits for the following call. On IO failure the
    /// file stays where it is and is retried next cycle.
    pub fn consume(&mut self, workspace: &Path, clock: &dyn Clock) -> Result<Option<Directive>, InboxError> {
        let file = workspace.join(DIRECTIVE_FILE);
        if file.exists() {
            if let Some(d) = consume_file(workspace, &file, clock)? {
                return Ok(Some(d));
            }
        }
        let Some(text) = self.pending_cli.take() else {
            return Ok(None);
        };
        let (text, truncated) = normalize_directive(&text)?;
        Ok(Some(Directive {
            text,
            source: DirectiveSource::Cli,
            received_at: clock.now(),
            archive_path: None,
            truncated,
        }))
    }
}

fn consume_file(workspace: &Path, file: &Path, clock: &dyn Clock) -> Result<Option<Directive>, InboxError> {
    let raw = fs::read(file).map_err(io_err(file))?;
    let content = String::from_utf8_lossy(&raw).into_owned();
    let archive_dir = workspace.join(ARCHIVE_DIR);
    fs::create_dir_all(&archive_dir).map_err(io_err(&archive_dir))?;
    let local = clock.local_now();
    let mut attempt = 1;
    let target = loop {
        let candidate = archive_dir.join(archive_file_name(local, attempt));
        if !candidate.exists() {
            break candidate;
        }
        attempt += 1;
    };
    // archive before acting on it
    fs::rename(file, &target).map_err(io_err(file))?;
    let name = target.file_name().unwrap_or_default().to_string_lossy();
    let archive_path = format!("{ARCHIVE_DIR}/{name}");
    match normalize_directive(&content) {
        Ok((text, truncated)) => {
            if truncated {
                log::warn!("directive in {DIRECTIVE_FILE} exceeds the size limit; truncated");
            }
            log::info!("consumed {DIRECTIVE_FILE}, archived as {archive_path}");
            Ok(Some(Directive {
                text,
                source: DirectiveSource::File,
                received_at: clock.now(),
                archive_path: Some(archive_path),
                truncated,
            }))
        }
        Err(_) => {
            log::warn!("empty {DIRECTIVE_FILE} archived as {archive_path} and ignored");
            Ok(None)
        }
    }
}

/// Drop a directive file for a running daemon. Refuses to overwrite an
/// unconsumed one: the file appears atomically or not at all.
pub fn submit_file(workspace: &Path, text: &str) -> Result<PathBuf, InboxError> {
    let (body, _) = normalize_directive(text)?;
    let target = workspace.join(DIRECTIVE_FILE);
    if target.exists() {
        return Err(InboxError::Pending(DIRECTIVE_FILE.to_string()));
    }
    let tmp = workspace.join(format!(".{DIRECTIVE_FILE}.{}.tmp", std::process::id()));
    fs::write(&tmp, format!("{body}\n")).map_err(io_err(&tmp))?;
    let linked = fs::hard_link(&tmp, &target);
    let _ = fs::remove_file(&tmp);
    match linked {
        Ok(()) => Ok(target),
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(InboxError::Pending(DIRECTIVE_FILE.to_string())),
        Err(e) => Err(io_err(&target)(e)),
    }
}

/// Text of an unconsumed directive file, if any.
pub fn pending_file(workspace: &Path) -> Option<String> {
    fs::read_to_string(workspace.join(DIRECTIVE_FILE)).ok()
}

pub fn archived(workspace: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(workspace.join(ARCHIVE_DIR))
        .map(|rd| rd.flatten().map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.sort();
    v
}
