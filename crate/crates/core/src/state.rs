//! Durable loop state: cycle counter, phase, anti-burn level, the active
//! experiment and the cumulative cost ledger.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::cost::CostLedger;

pub const STATE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Think,
    Execute,
    Monitor,
    Reflect,
    Cooldown,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Idle => "idle",
            Phase::Think => "think",
            Phase::Execute => "execute",
            Phase::Monitor => "monitor",
            Phase::Reflect => "reflect",
            Phase::Cooldown => "cooldown",
        }
    }

    pub fn parse(s: &str) -> Option<Phase> {
        [
            Phase::Idle,
            Phase::Think,
            Phase::Execute,
            Phase::Monitor,
            Phase::Reflect,
            Phase::Cooldown,
        ]
        .into_iter()
        .find(|p| p.as_str() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// True if `seq` (the phases entered during one cycle, `idle` excluded) is a
/// legal cycle: a prefix of think, execute, monitor, reflect (monitor only
/// when something launched) or a prefix of think, cooldown. Consecutive
/// repeats, as written when a monitor phase is resumed after a restart,
/// count once.
pub fn is_valid_cycle_phases(seq: &[Phase]) -> bool {
    let mut dedup: Vec<Phase> = Vec::with_capacity(seq.len());
    for p in seq.iter().copied().filter(|p| *p != Phase::Idle) {
        if dedup.last() != Some(&p) {
            dedup.push(p);
        }
    }
    const WORK: [Phase; 4] = [Phase::Think, Phase::Execute, Phase::Monitor, Phase::Reflect];
    const WORK_NO_LAUNCH: [Phase; 3] = [Phase::Think, Phase::Execute, Phase::Reflect];
    const WAIT: [Phase; 2] = [Phase::Think, Phase::Cooldown];
    [&WORK[..], &WORK_NO_LAUNCH[..], &WAIT[..]]
        .iter()
        .any(|canon| dedup.len() <= canon.len() && canon[..dedup.len()] == dedup[..])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum DryRunVerdict {
    Passed,
    Failed { reason: String },
    Skipped,
}

impl DryRunVerdict {
    pub fn permits_launch(&self) -> bool {
        matches!(self, DryRunVerdict::Passed | DryRunVerdict::Skipped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitClass {
    ExitedOk,
    ExitedError,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: u32,
    pub command: Vec<String>,
    /// Workspace-relative.
    pub log_path: String,
    pub pid: Option<u32>,
    /// Kernel start time of the process, for the pid-reuse guard.
    pub start_time: Option<u64>,
    pub dry_run: DryRunVerdict,
    pub launched_at: Option<DateTime<Utc>>,
    pub exit_status: Option<i32>,
    pub exit_class: Option<ExitClass>,
    #[serde(default)]
    pub metrics: BTreeMap<String, f64>,
}

impl ExperimentRecord {
    pub fn dir_name(id: u32) -> String {
        format!("exp{id:03}")
    }

    pub fn run_dir(id: u32) -> String {
        format!("runs/{}", Self::dir_name(id))
    }

    pub fn default_log_path(id: u32) -> String {
        format!("runs/{}/train.log", Self::dir_name(id))
    }

    pub fn monitor_journal_path(id: u32) -> String {
        format!("runs/{}/monitor.jsonl", Self::dir_name(id))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DryRunStats {
    pub planned: u64,
    pub caught: u64,
}

/// What one cycle produced, for the anti-burn rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleOutput {
    pub launched: bool,
    pub dry_run_caught: bool,
    pub milestone: bool,
    pub artifact: bool,
}

impl CycleOutput {
    pub fn is_meaningful(&self) -> bool {
        self.launched || self.dry_run_caught || self.milestone || self.artifact
    }
}

/// Execute-phase summary carried into Reflect, persisted so a restarted
/// daemon can reflect on a run it did not see start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingReflect {
    pub plan_rationale: String,
    pub summary: String,
    pub output: CycleOutput,
    #[serde(default)]
    pub logs: Option<RunLogs>,
}

/// How a monitored run ended: the final log tail and extracted metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogs {
    pub experiment_id: u32,
    pub exit_status: Option<i32>,
    pub exit_class: ExitClass,
    pub stalled: bool,
    pub metrics: BTreeMap<String, f64>,
    pub tail: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub version: u32,
    pub cycle: u64,
    pub phase: Phase,
    pub burn_level: u32,
    pub active_experiment: Option<ExperimentRecord>,
    pub ledger: CostLedger,
    pub paused: bool,
    pub next_experiment_id: u32,
    #[serde(default)]
    pub dry_runs: DryRunStats,
    #[serde(default)]
    pub pending: Option<PendingReflect>,
    #[serde(default)]
    pub directives_consumed: u64,
}

impl LoopState {
    pub fn new(ledger: CostLedger) -> Self {
        LoopState {
            version: STATE_VERSION,
            cycle: 0,
            phase: Phase::Idle,
            burn_level: 0,
            active_experiment: None,
            ledger,
            paused: false,
            next_experiment_id: 1,
            dry_runs: DryRunStats::default(),
            pending: None,
            directives_consumed: 0,
        }
    }

    /// Apply the anti-burn rule after a finished cycle.
    pub fn settle_burn(&mut self, output: &CycleOutput) {
        if output.is_meaningful() {
            self.burn_level = 0;
        } else {
            self.burn_level = self.burn_level.saturating_add(1);
        }
    }
}
