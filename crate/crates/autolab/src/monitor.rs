//! Watching a training run with OS-level probes only: process liveness,
//! GPU activity and the log tail. Nothing in this module can reach the LLM
//! gateway.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::Duration;

use autolab_core::config::MetricPatternSpec;
use autolab_core::gpu::{parse_smi_csv, GpuSample, StallDetector};
use autolab_core::state::ExitClass;
use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::clock::Clock;
use crate::executor::{wait_with_timeout, ProcessHandle};
use crate::procfs::{self, Probe};
use crate::tail::{tail_file, Tail};

pub const TAIL_LINES: usize = 50;
/// Upper bound on bytes read per tail, whatever the line lengths.
pub const TAIL_MAX_BYTES: u64 = 256 * 1024;
pub const JOURNAL_ROTATE_AT: usize = 10_000;
pub const COMPLETION_MARKER: &str = "training complete";
const PROBE_TIMEOUT: Duration = Duration::from_secs(30);

pub const DEFAULT_METRICS: [&str; 8] = ["loss", "acc", "accuracy", "val_loss", "val_acc", "lr", "epoch", "step"];

/// `kill -0` plus a start-time comparison, so a recycled pid reads as dead.
/// Zombies count as dead. A process we may not signal counts as alive.
pub fn check_liveness(pid: u32, recorded_start_time: Option<u64>) -> bool {
    match procfs::signal_zero(pid) {
        Probe::Gone => false,
        Probe::PermissionDenied => {
            log::warn!("pid {pid} exists but cannot be probed; assuming alive");
            true
        }
        Probe::Exists => match procfs::stat(pid) {
            Some(s) if s.state == 'Z' || s.state == 'X' => false,
            Some(s) => recorded_start_time.is_none_or(|t| t == s.start_time),
            None => false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Liveness {
    pub alive: bool,
    pub exit_code: Option<i32>,
    pub signal: Option<i32>,
}

/// Liveness of a handle. Uses the exit status directly when this daemon
/// is the parent.
pub fn handle_liveness(h: &mut ProcessHandle) -> Liveness {
    use std::os::unix::process::ExitStatusExt;
    if let Some(child) = h.child.as_mut() {
        match child.try_wait() {
            Ok(Some(st)) => {
                return Liveness {
                    alive: false,
                    exit_code: st.code(),
                    signal: st.signal(),
                }
            }
            Ok(None) => {
                return Liveness {
                    alive: true,
                    exit_code: None,
                    signal: None,
                }
            }
            Err(e) => log::warn!("try_wait on pid {}: {e}", h.pid),
        }
    }
    Liveness {
        alive: check_liveness(h.pid, h.start_time),
        exit_code: None,
        signal: None,
    }
}

/// Last `n` lines of a log, reading only the end of the file.
pub fn tail_log(path: &Path, n: usize) -> io::Result<Tail> {
    tail_file(path, n, TAIL_MAX_BYTES)
}

#[derive(Debug, Clone)]
pub struct MetricPattern {
    pub name: String,
    pub regex: Regex,
}

#[derive(Debug, thiserror::Error)]
pub enum PatternError {
    #[error("metric pattern `{name}`: {source}")]
    Invalid { name: String, source: regex::Error },
    #[error("metric pattern `{0}` needs exactly one capture group")]
    CaptureGroups(String),
}

impl MetricPattern {
    pub fn new(name: &str, pattern: &str) -> Result<Self, PatternError> {
        let regex = Regex::new(pattern).map_err(|source| PatternError::Invalid {
            name: name.to_string(),
            source,
        })?;
        if regex.captures_len() != 2 {
            return Err(PatternError::CaptureGroups(name.to_string()));
        }
        Ok(MetricPattern {
            name: name.to_string(),
            regex,
        })
    }

    /// `name=1.23`, `name: 1.23` or `name 1.23`, not preceded by a word
    /// character (so `acc` does not match inside `val_acc`).
    pub fn token(name: &str) -> Self {
        let pat = format!(
            r"(?i)(?:^|[^A-Za-z0-9_]){}(?:\s*[=:]\s*|\s+)([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)",
            regex::escape(name)
        );
        MetricPattern::new(name, &pat).expect("token pattern compiles")
    }
}

pub fn default_patterns() -> Vec<MetricPattern> {
    DEFAULT_METRICS.iter().map(|n| MetricPattern::token(n)).collect()
}

/// Defaults plus configured extras; an extra with a default's name replaces it.
pub fn compile_patterns(extra: &[MetricPatternSpec]) -> Result<Vec<MetricPattern>, PatternError> {
    let mut out = default_patterns();
    for spec in extra {
        let p = MetricPattern::new(&spec.name, &spec.pattern)?;
        out.retain(|d| d.name != p.name);
        out.push(p);
    }
    Ok(out)
}

/// Latest value per metric: the last match in the last matching line wins.
pub fn extract_metrics<S: AsRef<str>>(lines: &[S], patterns: &[MetricPattern]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for p in patterns {
        for line in lines.iter().rev() {
            let found = p
                .regex
                .captures_iter(line.as_ref())
                .filter_map(|c| c.get(1)?.as_str().parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .last();
            if let Some(v) = found {
                out.insert(p.name.clone(), v);
                break;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub enum GpuReading {
    Samples(Vec<GpuSample>),
    /// Probe missing or disabled.
    Unavailable,
    ParseError(String),
}

/// Runs the configured probe command; warns once if the tool is missing.
#[derive(Debug, Clone)]
pub struct GpuProber {
    argv: Vec<String>,
    warned: bool,
}

impl GpuProber {
    pub fn new(argv: Vec<String>) -> Self {
        GpuProber { argv, warned: false }
    }

    pub fn probe(&mut self) -> GpuReading {
        let Some((prog, args)) = self.argv.split_first() else {
            return GpuReading::Unavailable;
        };
        let spawned = Command::new(prog)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn();
        let mut child = match spawned {
            Ok(c) => c,
            Err(e) => {
                if !self.warned {
                    log::warn!("GPU probe `{prog}` unavailable ({e}); monitoring liveness and logs only");
                    self.warned = true;
                }
                return GpuReading::Unavailable;
            }
        };
        let status = match wait_with_timeout(&mut child, PROBE_TIMEOUT) {
            Ok(Some(st)) => st,
            _ => {
                let _ = child.kill();
                let _ = child.wait();
                return GpuReading::ParseError("probe timed out".into());
            }
        };
        let mut out = String::new();
        if let Some(mut so) = child.stdout.take() {
            let _ = io::Read::read_to_string(&mut so, &mut out);
        }
        if !status.success() {
            return GpuReading::ParseError(format!("probe exited with {status}"));
        }
        match parse_smi_csv(&out) {
            Ok(s) => GpuReading::Samples(s),
            Err(e) => GpuReading::ParseError(e.to_string()),
        }
    }

    /// Indices of every GPU the probe reports, sorted.
    pub fn detect(&mut self) -> Vec<u32> {
        match self.probe() {
            GpuReading::Samples(s) => {
                let mut v: Vec<u32> = s.iter().map(|g| g.index).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorReport {
    pub at: DateTime<Utc>,
    pub poll: u64,
    pub alive: bool,
    pub gpu_active: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gpu: Vec<GpuSample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_error: Option<String>,
    pub stalled: bool,
    pub log_tail: Vec<String>,
    pub latest_metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PollStats {
    pub polls: u64,
    /// Always zero: monitoring never consults the LLM.
    pub llm_calls: u64,
    pub gpu_unavailable: u64,
    pub gpu_parse_errors: u64,
    pub log_missing: u64,
    pub stall_polls: u64,
}

/// Append-only per-run journal; after [`JOURNAL_ROTATE_AT`] records the
/// file is moved to `<name>.1` and a fresh one begun.
pub struct MonitorJournal {
    path: PathBuf,
    file: File,
    count: usize,
}

impl MonitorJournal {
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let count = fs::read_to_string(path).map(|t| t.lines().count()).unwrap_or(0);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(MonitorJournal {
            path: path.to_path_buf(),
            file,
            count,
        })
    }

    pub fn append(&mut self, r: &MonitorReport) -> io::Result<()> {
        if self.count >= JOURNAL_ROTATE_AT {
            let mut rotated = self.path.clone().into_os_string();
            rotated.push(".1");
            fs::rename(&self.path, &rotated)?;
            self.file = OpenOptions::new().create(true).append(true).open(&self.path)?;
            self.count = 0;
        }
        let line = serde_json::to_string(r).expect("report serializes");
        writeln!(self.file, "{line}")?;
        self.count += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorOutcome {
    /// False when interrupted (stop requested) while the process still ran.
    pub finished: bool,
    pub exit_status: Option<i32>,
    pub exit_class: ExitClass,
    pub tail: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    pub stats: PollStats,
    pub stalled: bool,
}

pub struct MonitorSettings {
    pub poll_interval: Duration,
    pub patterns: Vec<MetricPattern>,
    pub gpu: GpuProber,
    /// GPU index the run uses, to judge activity; None means any GPU.
    pub gpu_index: Option<u32>,
}

/// Classify a finished run. The exit code decides when known; otherwise
/// the log tail does.
pub fn classify_exit<S: AsRef<str>>(exit_code: Option<i32>, signal: Option<i32>, tail: &[S]) -> ExitClass {
    match (exit_code, signal) {
        (Some(0), _) => return ExitClass::ExitedOk,
        (Some(_), _) | (None, Some(_)) => return ExitClass::ExitedError,
        _ => {}
    }
    let lower: Vec<String> = tail.iter().map(|l| l.as_ref().to_ascii_lowercase()).collect();
    if lower.iter().any(|l| l.contains(COMPLETION_MARKER)) {
        ExitClass::ExitedOk
    } else if lower.iter().any(|l| l.contains("traceback") || l.contains("error")) {
        ExitClass::ExitedError
    } else {
        ExitClass::Unknown
    }
}

/// Poll until the process exits: sleep, probe liveness, GPU and log,
/// journal the report, hand it to `on_report`. `interrupt` is checked
/// during each sleep; when it fires the function returns unfinished.
pub fn monitor_until_exit(
    handle: &mut ProcessHandle,
    log_path: &Path,
    journal: &mut MonitorJournal,
    settings: &mut MonitorSettings,
    clock: &dyn Clock,
    interrupt: &dyn Fn() -> bool,
    on_report: &mut dyn FnMut(&MonitorReport),
) -> MonitorOutcome {
    let mut stats = PollStats::default();
    let mut stall = StallDetector::default();
    let mut ever_stalled = false;
    loop {
        clock.sleep(settings.poll_interval, interrupt);
        let live = handle_liveness(handle);
        if live.alive && interrupt() {
            let tail = tail_log(log_path, TAIL_LINES).unwrap_or_default().lines;
            return MonitorOutcome {
                finished: false,
                exit_status: None,
                exit_class: ExitClass::Unknown,
                metrics: extract_metrics(&tail, &settings.patterns),
                tail,
                stats,
                stalled: ever_stalled,
            };
        }
        stats.polls += 1;
        let reading = if live.alive {
            settings.gpu.probe()
        } else {
            GpuReading::Unavailable
        };
        let (samples, probe_error) = match reading {
            GpuReading::Samples(s) => (Some(s), None),
            GpuReading::Unavailable => {
                stats.gpu_unavailable += 1;
                (None, None)
            }
            GpuReading::ParseError(e) => {
                stats.gpu_parse_errors += 1;
                (None, Some(e))
            }
        };
        let ours: Option<Vec<GpuSample>> = samples.as_ref().map(|s| match settings.gpu_index {
            Some(i) if s.iter().any(|g| g.index == i) => s.iter().filter(|g| g.index == i).copied().collect(),
            _ => s.clone(),
        });
        let stalled = stall.observe(live.alive, ours.as_deref());
        if stalled {
            stats.stall_polls += 1;
            if !ever_stalled {
                log::warn!("pid {} alive but GPU idle for 3 polls: possible silent stall", handle.pid);
            }
            ever_stalled = true;
        }
        let tail = match tail_log(log_path, TAIL_LINES) {
            Ok(t) => {
                if !log_path.exists() {
                    stats.log_missing += 1;
                }
                t.lines
            }
            Err(e) => {
                log::warn!("cannot read {}: {e}", log_path.display());
                Vec::new()
            }
        };
        let report = MonitorReport {
            at: clock.now(),
            poll: stats.polls,
            alive: live.alive,
            gpu_active: ours.as_ref().map(|s| s.iter().any(|g| g.utilization_pct > 0.0)),
            gpu: samples.unwrap_or_default(),
            probe_error,
            stalled,
            latest_metrics: extract_metrics(&tail, &settings.patterns),
            log_tail: tail,
        };
        if let Err(e) = journal.append(&report) {
            log::warn!("monitor journal: {e}");
        }
        on_report(&report);
        if !live.alive {
            return MonitorOutcome {
                finished: true,
                exit_status: live.exit_code,
                exit_class: classify_exit(live.exit_code, live.signal, &report.log_tail),
                tail: report.log_tail,
                metrics: report.latest_metrics,
                stats,
                stalled: ever_stalled,
            };
        }
    }
}
