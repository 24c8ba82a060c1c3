//! Workspace file access, shell commands, the dry-run gate and detached
//! experiment launch.

use std::collections::BTreeSet;
use std::fs::{self, File, OpenOptions};
use std::io;
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::path::{Component, Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use autolab_core::roster::AgentKind;
use autolab_core::state::{DryRunVerdict, ExperimentRecord};
use autolab_core::text::keep_tail;
use chrono::{DateTime, Utc};

use crate::config_file::{BRIEF_FILE, MEMORY_FILE, STATE_FILE};
use crate::fsutil::atomic_write;
use crate::procfs;
use crate::tail::tail_file;

pub const SHELL_LOG_DIR: &str = "shell_logs";
pub const TAIL_LINES: usize = 100;
pub const TAIL_BYTES: u64 = 16 * 1024;
pub const READ_MAX_BYTES: usize = 16 * 1024;
pub const LIST_MAX_ENTRIES: usize = 500;
pub const GPU_ENV: &str = "CUDA_VISIBLE_DEVICES";
pub const DRYRUN_ENV: &str = "DRYRUN";
pub const DRYRUN_FLAG: &str = "--dry-run";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Actor {
    Agent(AgentKind),
    /// The daemon itself (memory and state persistence).
    System,
}

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("`{0}` is a protected file and cannot be written by agents")]
    ProtectedFileViolation(String),
    #[error("`{0}` resolves outside the workspace")]
    PathEscape(String),
    #[error("`{0}`: {1}")]
    Io(String, #[source] io::Error),
    #[error("command timed out after {0}s; process group killed")]
    Timeout(u64),
    #[error("cannot start `{0}`: {1}")]
    SpawnError(String, #[source] io::Error),
    #[error("empty command")]
    EmptyCommand,
    #[error("launch refused: dry-run did not pass ({0})")]
    DryRunNotPassed(String),
    #[error("experiment {0} is still active; only one run at a time")]
    WorkspaceBusy(u32),
}

/// The workspace root and the files agents may never write.
#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
    protected: BTreeSet<PathBuf>,
}

impl Workspace {
    pub fn open(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root)?;
        let root = root.canonicalize()?;
        let protected = [STATE_FILE, MEMORY_FILE, BRIEF_FILE].iter().map(PathBuf::from).collect();
        Ok(Workspace { root, protected })
    }

    /// Also protect `rel` (e.g. a brief stored under a non-default name).
    pub fn protect(&mut self, rel: &str) {
        self.protected.insert(PathBuf::from(rel));
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn protected(&self) -> impl Iterator<Item = &Path> {
        self.protected.iter().map(PathBuf::as_path)
    }

    /// Resolve `path` (relative to the root, or absolute) with every
    /// existing component's symlinks followed, and require the result to
    /// stay inside the workspace.
    pub fn resolve(&self, path: &str) -> Result<PathBuf, ExecError> {
        let escape = || ExecError::PathEscape(path.to_string());
        if path.contains('\0') {
            return Err(escape());
        }
        let mut cur = self.root.clone();
        for comp in Path::new(path).components() {
            match comp {
                Component::Prefix(_) | Component::RootDir => cur = PathBuf::from("/"),
                Component::CurDir => {}
                Component::ParentDir => {
                    cur.pop();
                }
                Component::Normal(name) => {
                    cur.push(name);
                    match fs::symlink_metadata(&cur) {
                        Ok(_) => cur = cur.canonicalize().map_err(|_| escape())?,
                        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                        Err(_) => return Err(escape()),
                    }
                }
            }
        }
        if !cur.starts_with(&self.root) {
            return Err(escape());
        }
        Ok(cur)
    }

    pub fn relative(&self, abs: &Path) -> String {
        abs.strip_prefix(&self.root)
            .unwrap_or(abs)
            .to_string_lossy()
            .into_owned()
    }

    pub fn is_protected(&self, abs: &Path) -> bool {
        abs.strip_prefix(&self.root)
            .map(|rel| self.protected.contains(rel))
            .unwrap_or(false)
    }

    /// Current bytes of every protected file (None if absent).
    pub fn snapshot_protected(&self) -> Vec<(PathBuf, Option<Vec<u8>>)> {
        self.protected
            .iter()
            .map(|rel| {
                let abs = self.root.join(rel);
                let bytes = fs::read(&abs).ok();
                (abs, bytes)
            })
            .collect()
    }

    /// Undo changes a shell command made to protected files. Returns the
    /// relative names that had to be restored.
    pub fn restore_protected(&self, snapshot: Vec<(PathBuf, Option<Vec<u8>>)>) -> Vec<String> {
        let mut touched = Vec::new();
        for (abs, before) in snapshot {
            let now = fs::read(&abs).ok();
            if now == before {
                continue;
            }
            touched.push(self.relative(&abs));
            let res = match &before {
                Some(b) => atomic_write(&abs, b),
                None => fs::remove_file(&abs),
            };
            if let Err(e) = res {
                log::error!("could not restore {}: {e}", abs.display());
            }
        }
        touched
    }

    pub fn write_file(&self, path: &str, content: &str, actor: Actor) -> Result<PathBuf, ExecError> {
        let abs = self.resolve(path)?;
        if abs == self.root {
            return Err(ExecError::Io(path.to_string(), io::Error::other("is the workspace root")));
        }
        if actor != Actor::System && self.is_protected(&abs) {
            log::warn!("{actor:?} tried to write protected file {path}");
            return Err(ExecError::ProtectedFileViolation(self.relative(&abs)));
        }
        atomic_write(&abs, content.as_bytes()).map_err(|e| ExecError::Io(path.to_string(), e))?;
        Ok(abs)
    }

    /// Read a text file; content beyond [`READ_MAX_BYTES`] is cut with a note.
    pub fn read_file(&self, path: &str) -> Result<String, ExecError> {
        let abs = self.resolve(path)?;
        let bytes = fs::read(&abs).map_err(|e| ExecError::Io(path.to_string(), e))?;
        let total = bytes.len();
        let mut text = String::from_utf8_lossy(&bytes[..total.min(READ_MAX_BYTES)]).into_owned();
        if total > READ_MAX_BYTES {
            text.push_str(&format!("\n[... truncated, {total} bytes total]"));
        }
        Ok(text)
    }

    /// Files under `dir`, workspace-relative, sorted, hidden entries skipped.
    pub fn list_files(&self, dir: &str) -> Result<Vec<String>, ExecError> {
        let abs = self.resolve(dir)?;
        let mut out = Vec::new();
        let mut stack = vec![abs];
        while let Some(d) = stack.pop() {
            let entries = fs::read_dir(&d).map_err(|e| ExecError::Io(dir.to_string(), e))?;
            for e in entries.flatten() {
                if e.file_name().to_string_lossy().starts_with('.') {
                    continue;
                }
                let p = e.path();
                match e.file_type() {
                    Ok(t) if t.is_dir() => stack.push(p),
                    Ok(_) => out.push(self.relative(&p)),
                    Err(_) => {}
                }
            }
        }
        out.sort();
        out.truncate(LIST_MAX_ENTRIES);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShellOutput {
    pub exit_status: Option<i32>,
    pub signal: Option<i32>,
    pub stdout_tail: String,
    pub stderr_tail: String,
    pub stdout_log: PathBuf,
    pub stderr_log: PathBuf,
}

impl ShellOutput {
    pub fn success(&self) -> bool {
        self.exit_status == Some(0)
    }
}

static SHELL_SEQ: AtomicU64 = AtomicU64::new(0);

fn tail_text(path: &Path) -> String {
    let t = tail_file(path, TAIL_LINES, TAIL_BYTES).unwrap_or_default();
    t.lines.join("\n")
}

pub(crate) fn wait_with_timeout(child: &mut Child, timeout: Duration) -> io::Result<Option<ExitStatus>> {
    let start = Instant::now();
    let mut nap = Duration::from_millis(2);
    loop {
        if let Some(st) = child.try_wait()? {
            return Ok(Some(st));
        }
        if start.elapsed() >= timeout {
            return Ok(None);
        }
        std::thread::sleep(nap);
        nap = (nap * 2).min(Duration::from_millis(50));
    }
}

/// Run `argv` in `cwd` in its own process group. Output streams go to
/// files under `<workspace>/shell_logs/`; tails are returned. On timeout
/// the whole group is killed.
pub fn run_command(
    ws: &Workspace,
    argv: &[String],
    env: &[(&str, &str)],
    timeout: Duration,
    label: &str,
) -> Result<ShellOutput, ExecError> {
    let (prog, args) = argv.split_first().ok_or(ExecError::EmptyCommand)?;
    let dir = ws.root().join(SHELL_LOG_DIR);
    fs::create_dir_all(&dir).map_err(|e| ExecError::Io(SHELL_LOG_DIR.into(), e))?;
    let seq = SHELL_SEQ.fetch_add(1, Ordering::Relaxed);
    let stem = format!(
        "{}-{}-{seq:04}-{label}",
        Utc::now().format("%Y%m%dT%H%M%S"),
        std::process::id()
    );
    let stdout_log = dir.join(format!("{stem}.stdout"));
    let stderr_log = dir.join(format!("{stem}.stderr"));
    let open = |p: &Path| File::create(p).map_err(|e| ExecError::Io(p.display().to_string(), e));
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .current_dir(ws.root())
        .stdin(Stdio::null())
        .stdout(open(&stdout_log)?)
        .stderr(open(&stderr_log)?)
        .process_group(0);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let mut child = cmd.spawn().map_err(|e| ExecError::SpawnError(prog.clone(), e))?;
    let pgid = child.id() as i32;
    let status = wait_with_timeout(&mut child, timeout).map_err(|e| ExecError::Io(prog.clone(), e))?;
    // stragglers left in the group (background jobs) go too
    procfs::kill_group(pgid);
    let Some(status) = status else {
        let _ = child.wait();
        return Err(ExecError::Timeout(timeout.as_secs()));
    };
    Ok(ShellOutput {
        exit_status: status.code(),
        signal: status.signal(),
        stdout_tail: tail_text(&stdout_log),
        stderr_tail: tail_text(&stderr_log),
        stdout_log,
        stderr_log,
    })
}

/// Settings the executor needs from the config.
#[derive(Debug, Clone)]
pub struct ExecSettings {
    pub mandatory_dry_run: bool,
    pub dry_run_timeout: Duration,
    pub shell_timeout: Duration,
    /// Index exported to the training process, if any GPU is usable.
    pub gpu: Option<u32>,
}

/// A launched training process.
#[derive(Debug)]
pub struct ProcessHandle {
    pub pid: u32,
    pub start_time: Option<u64>,
    /// Present when this daemon spawned the process; absent once adopted.
    pub child: Option<Child>,
}

impl ProcessHandle {
    pub fn adopt(pid: u32, start_time: Option<u64>) -> Self {
        ProcessHandle {
            pid,
            start_time,
            child: None,
        }
    }
}

/// Dry-run `argv`: `DRYRUN=1` in the environment and `--dry-run` appended.
/// Passes iff the command exits 0 within the dry-run timeout.
pub fn dry_run(ws: &Workspace, argv: &[String], s: &ExecSettings) -> DryRunVerdict {
    if !s.mandatory_dry_run {
        log::warn!("mandatory dry-run is DISABLED; launching {argv:?} unchecked");
        return DryRunVerdict::Skipped;
    }
    let mut full = argv.to_vec();
    full.push(DRYRUN_FLAG.to_string());
    let gpu = s.gpu.map(|g| g.to_string());
    let mut env = vec![(DRYRUN_ENV, "1")];
    if let Some(g) = &gpu {
        env.push((GPU_ENV, g.as_str()));
    }
    match run_command(ws, &full, &env, s.dry_run_timeout, "dryrun") {
        Ok(out) if out.success() => DryRunVerdict::Passed,
        Ok(out) => {
            let detail = if out.stderr_tail.trim().is_empty() {
                &out.stdout_tail
            } else {
                &out.stderr_tail
            };
            let code = match (out.exit_status, out.signal) {
                (Some(c), _) => format!("exit {c}"),
                (None, Some(sig)) => format!("signal {sig}"),
                _ => "abnormal exit".to_string(),
            };
            DryRunVerdict::Failed {
                reason: format!("{code}: {}", keep_tail(detail.trim(), 1500)),
            }
        }
        Err(ExecError::Timeout(secs)) => DryRunVerdict::Failed {
            reason: format!("timed out after {secs}s"),
        },
        Err(e) => DryRunVerdict::Failed { reason: e.to_string() },
    }
}

/// Start the training command detached from the daemon: own process
/// group, stdin closed, stdout and stderr appended to the run log.
pub fn launch(
    ws: &Workspace,
    id: u32,
    argv: &[String],
    verdict: DryRunVerdict,
    s: &ExecSettings,
    now: DateTime<Utc>,
) -> Result<(ExperimentRecord, ProcessHandle), ExecError> {
    if let DryRunVerdict::Failed { reason } = &verdict {
        return Err(ExecError::DryRunNotPassed(reason.clone()));
    }
    let (prog, args) = argv.split_first().ok_or(ExecError::EmptyCommand)?;
    let log_rel = ExperimentRecord::default_log_path(id);
    let log_abs = ws.resolve(&log_rel)?;
    if let Some(parent) = log_abs.parent() {
        fs::create_dir_all(parent).map_err(|e| ExecError::Io(log_rel.clone(), e))?;
    }
    let log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_abs)
        .map_err(|e| ExecError::Io(log_rel.clone(), e))?;
    let log2 = log.try_clone().map_err(|e| ExecError::Io(log_rel.clone(), e))?;
    let mut cmd = Command::new(prog);
    cmd.args(args)
        .current_dir(ws.root())
        .stdin(Stdio::null())
        .stdout(log)
        .stderr(log2)
        .process_group(0);
    if let Some(g) = s.gpu {
        cmd.env(GPU_ENV, g.to_string());
    }
    let child = cmd.spawn().map_err(|e| ExecError::SpawnError(prog.clone(), e))?;
    let pid = child.id();
    let start_time = procfs::start_time(pid);
    let record = ExperimentRecord {
        id,
        command: argv.to_vec(),
        log_path: log_rel,
        pid: Some(pid),
        start_time,
        dry_run: verdict,
        launched_at: Some(now),
        exit_status: None,
        exit_class: None,
        metrics: Default::default(),
    };
    log::info!("launched exp{id:03} pid {pid}: {argv:?}");
    Ok((
        record,
        ProcessHandle {
            pid,
            start_time,
            child: Some(child),
        },
    ))
}
