//! On-disk home of the two memory tiers.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use autolab_core::memory::{render_memory, LogCaps, MemoryError, MemoryLog, ProjectBrief};

use crate::fsutil::atomic_write;

pub const QUARANTINE_FILE: &str = "MEMORY_LOG.quarantine";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Memory { path: PathBuf, source: MemoryError },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Read and freeze the brief. Over-size briefs are rejected, never cut.
pub fn load_brief(path: &Path, max_chars: usize) -> Result<ProjectBrief, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    ProjectBrief::new(&text, &path.to_string_lossy(), max_chars).map_err(|source| StoreError::Memory {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug)]
pub struct LoadedMemory {
    pub log: MemoryLog,
    pub quarantined: Vec<String>,
}

/// Missing file is a fresh, empty log. Malformed lines are dropped from the
/// log, reported, and appended to a quarantine file next to it.
pub fn load_memory(path: &Path, caps: LogCaps) -> Result<LoadedMemory, StoreError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Ok(LoadedMemory {
                log: MemoryLog::new(caps),
                quarantined: Vec::new(),
            })
        }
        Err(e) => return Err(io_err(path)(e)),
    };
    let parsed = MemoryLog::parse(&text, caps);
    if !parsed.quarantined.is_empty() {
        log::warn!(
            "{}: {} malformed line(s) quarantined",
            path.display(),
            parsed.quarantined.len()
        );
        let qpath = path.with_file_name(QUARANTINE_FILE);
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&qpath)
            .map_err(io_err(&qpath))?;
        for line in &parsed.quarantined {
            writeln!(f, "{line}").map_err(io_err(&qpath))?;
        }
    }
    Ok(LoadedMemory {
        log: parsed.log,
        quarantined: parsed.quarantined,
    })
}

pub fn persist_memory(log: &MemoryLog, path: &Path) -> Result<(), StoreError> {
    atomic_write(path, log.render().as_bytes()).map_err(io_err(path))
}

/// Both tiers plus the bookkeeping needed to notice human edits.
#[derive(Debug)]
pub struct MemoryStore {
    brief_path: PathBuf,
    log_path: PathBuf,
    brief: ProjectBrief,
    log: MemoryLog,
    last_written: Option<String>,
}

impl MemoryStore {
    pub fn open(brief_path: &Path, log_path: &Path, brief_max: usize, caps: LogCaps) -> Result<Self, StoreError> {
        let brief = load_brief(brief_path, brief_max)?;
        let loaded = load_memory(log_path, caps)?;
        let last_written = fs::read_to_string(log_path).ok();
        Ok(MemoryStore {
            brief_path: brief_path.to_path_buf(),
            log_path: log_path.to_path_buf(),
            brief,
            log: loaded.log,
            last_written,
        })
    }

    pub fn brief(&self) -> &ProjectBrief {
        &self.brief
    }

    pub fn log(&self) -> &MemoryLog {
        &self.log
    }

    pub fn render(&self) -> String {
        render_memory(&self.brief, &self.log)
    }

    pub fn log_path(&self) -> &Path {
        &self.log_path
    }

    /// Check the brief on disk still matches the frozen copy.
    pub fn verify_brief(&self) -> Result<(), StoreError> {
        let err = |source| StoreError::Memory {
            path: self.brief_path.clone(),
            source,
        };
        self.brief.verify().map_err(err)?;
        let on_disk = fs::read_to_string(&self.brief_path).map_err(io_err(&self.brief_path))?;
        if !self.brief.matches(&on_disk) {
            return Err(err(MemoryError::BriefTampered));
        }
        Ok(())
    }

    /// True if the file differs from what this store last wrote or read.
    pub fn changed_on_disk(&self) -> bool {
        fs::read_to_string(&self.log_path).ok() != self.last_written
    }

    /// Pick up hand edits. Returns true if the file had changed.
    pub fn reload(&mut self) -> Result<bool, StoreError> {
        if !self.changed_on_disk() {
            return Ok(false);
        }
        log::info!("{} edited on disk, reloading", self.log_path.display());
        let loaded = load_memory(&self.log_path, self.log.caps())?;
        self.log = loaded.log;
        self.last_written = fs::read_to_string(&self.log_path).ok();
        Ok(true)
    }

    /// Apply `f` to the log and write the result through.
    pub fn update<R>(&mut self, f: impl FnOnce(&mut MemoryLog) -> R) -> Result<R, StoreError> {
        let r = f(&mut self.log);
        self.flush()?;
        Ok(r)
    }

    pub fn flush(&mut self) -> Result<(), StoreError> {
        if self.changed_on_disk() && self.last_written.is_some() {
            log::warn!(
                "{} changed on disk mid-cycle; those edits are overwritten",
                self.log_path.display()
            );
        }
        let text = self.log.render();
        atomic_write(&self.log_path, text.as_bytes()).map_err(io_err(&self.log_path))?;
        self.last_written = Some(text);
        Ok(())
    }
}
