//! `cycles.log`: one tab-separated line per phase transition
//! (`timestamp  cycle  phase  summary`).

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use autolab_core::state::{is_valid_cycle_phases, Phase};
use autolab_core::text::truncate_with_ellipsis;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::tail::tail_file;

const SUMMARY_MAX_CHARS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JournalLine {
    pub at: DateTime<Utc>,
    pub cycle: u64,
    pub phase: Phase,
    pub summary: String,
}

impl JournalLine {
    pub fn render(&self) -> String {
        let summary: String = self
            .summary
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!(
            "{}\t{}\t{}\t{}",
            self.at.format("%Y-%m-%dT%H:%M:%SZ"),
            self.cycle,
            self.phase,
            truncate_with_ellipsis(summary.trim(), SUMMARY_MAX_CHARS)
        )
    }

    pub fn parse(line: &str) -> Option<JournalLine> {
        let mut f = line.splitn(4, '\t');
        let at = DateTime::parse_from_rfc3339(f.next()?).ok()?.with_timezone(&Utc);
        let cycle = f.next()?.parse().ok()?;
        let phase = Phase::parse(f.next()?)?;
        Some(JournalLine {
            at,
            cycle,
            phase,
            summary: f.next().unwrap_or("").to_string(),
        })
    }
}

pub struct CycleJournal {
    path: PathBuf,
    file: File,
}

impl CycleJournal {
    pub fn open(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(CycleJournal {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append(&mut self, line: &JournalLine) -> io::Result<()> {
        writeln!(self.file, "{}", line.render())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Last `n` raw lines of a journal file (empty if missing).
pub fn journal_tail(path: &Path, n: usize) -> Vec<String> {
    tail_file(path, n, 1 << 20).map(|t| t.lines).unwrap_or_default()
}

pub fn read_journal(path: &Path) -> io::Result<Vec<JournalLine>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e),
    };
    Ok(text.lines().filter_map(JournalLine::parse).collect())
}

/// Phases entered per cycle, in journal order.
pub fn phases_by_cycle(lines: &[JournalLine]) -> Vec<(u64, Vec<Phase>)> {
    let mut out: Vec<(u64, Vec<Phase>)> = Vec::new();
    for l in lines {
        match out.iter_mut().find(|(c, _)| *c == l.cycle) {
            Some((_, v)) => v.push(l.phase),
            None => out.push((l.cycle, vec![l.phase])),
        }
    }
    out
}

/// Cycles whose phase sequence breaks the phase-order rule.
pub fn invalid_cycles(lines: &[JournalLine]) -> Vec<u64> {
    phases_by_cycle(lines)
        .into_iter()
        .filter(|(_, seq)| !is_valid_cycle_phases(seq))
        .map(|(c, _)| c)
        .collect()
}
