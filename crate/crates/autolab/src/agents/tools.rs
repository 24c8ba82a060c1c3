//! Tool execution on behalf of agents. Every call is checked against the
//! calling agent's allowlist before anything runs.

use std::time::Duration;

use autolab_core::memory::LogEntry;
use autolab_core::roster::{AgentKind, ToolCall, ToolName};
use autolab_core::state::{DryRunVerdict, ExperimentRecord};
use autolab_core::text::keep_tail;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::papers::PaperSearch;
use crate::clock::Clock;
use crate::executor::{self, Actor, ExecError, ExecSettings, ProcessHandle, Workspace};
use crate::memory_store::MemoryStore;

/// One executed (or refused) tool call, in execution order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub agent: AgentKind,
    pub tool: String,
    pub args: Value,
    pub ok: bool,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolResult {
    pub ok: bool,
    pub content: String,
}

impl ToolResult {
    fn ok(content: impl Into<String>) -> Self {
        ToolResult {
            ok: true,
            content: content.into(),
        }
    }

    fn err(kind: &str, msg: impl std::fmt::Display) -> Self {
        ToolResult {
            ok: false,
            content: format!("error: {kind}: {msg}"),
        }
    }
}

/// What the cycle's tool calls changed, for Reflect and the anti-burn rule.
#[derive(Debug, Default)]
pub struct CycleEffects {
    pub launched: Option<(ExperimentRecord, ProcessHandle)>,
    pub dry_runs_planned: u64,
    pub dry_runs_caught: u64,
    /// Non-empty files written by workers.
    pub artifacts: Vec<String>,
    pub launch_errors: Vec<String>,
    pub memory_entries: usize,
}

pub struct ToolHost<'a> {
    pub ws: &'a Workspace,
    pub memory: &'a mut MemoryStore,
    pub papers: &'a dyn PaperSearch,
    pub clock: &'a dyn Clock,
    pub exec: ExecSettings,
    pub cycle: u64,
    /// Id of an experiment still running from an earlier cycle.
    pub busy: Option<u32>,
    pub next_experiment_id: u32,
    pub effects: CycleEffects,
    pub trace: Vec<TraceEntry>,
}

fn str_arg<'v>(args: &'v Value, key: &str) -> Result<&'v str, ToolResult> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| ToolResult::err("InvalidArguments", format!("`{key}` (string) is required")))
}

/// argv from a list of strings, or a single string run through `sh -c`.
fn argv_arg(args: &Value, key: &str) -> Result<Vec<String>, ToolResult> {
    let bad = || ToolResult::err("InvalidArguments", format!("`{key}` must be a list of strings or a string"));
    match args.get(key) {
        Some(Value::Array(items)) => {
            let argv: Option<Vec<String>> = items.iter().map(|v| v.as_str().map(str::to_string)).collect();
            argv.filter(|a| !a.is_empty()).ok_or_else(bad)
        }
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(vec!["sh".into(), "-c".into(), s.clone()]),
        _ => Err(bad()),
    }
}

fn exec_err(e: ExecError) -> ToolResult {
    let kind = match &e {
        ExecError::ProtectedFileViolation(_) => "ProtectedFileViolation",
        ExecError::PathEscape(_) => "PathEscape",
        ExecError::Io(..) => "IoError",
        ExecError::Timeout(_) => "Timeout",
        ExecError::SpawnError(..) => "SpawnError",
        ExecError::EmptyCommand => "InvalidArguments",
        ExecError::DryRunNotPassed(_) => "DryRunNotPassed",
        ExecError::WorkspaceBusy(_) => "WorkspaceBusy",
    };
    ToolResult::err(kind, e)
}

impl ToolHost<'_> {
    /// Run `call` for `agent`. A tool outside the allowlist is refused
    /// with a ToolDenied result; nothing else happens.
    pub fn execute(&mut self, agent: AgentKind, call: &ToolCall) -> ToolResult {
        let result = if !agent.allows(&call.name) {
            log::warn!("ToolDenied: {agent} requested `{}`", call.name);
            let allowed: Vec<&str> = agent.allowed_tools().iter().map(|t| t.as_str()).collect();
            ToolResult::err(
                "ToolDenied",
                format!("`{}` is not available to {agent}; allowed: {}", call.name, allowed.join(", ")),
            )
        } else {
            let tool = ToolName::parse(&call.name).expect("allowlisted names parse");
            self.dispatch(agent, tool, &call.arguments).unwrap_or_else(|e| e)
        };
        self.trace.push(TraceEntry {
            agent,
            tool: call.name.clone(),
            args: call.arguments.clone(),
            ok: result.ok,
            outcome: keep_tail(&result.content, 300),
        });
        result
    }

    fn dispatch(&mut self, agent: AgentKind, tool: ToolName, args: &Value) -> Result<ToolResult, ToolResult> {
        Ok(match tool {
            ToolName::LogMemory => self.log_memory(args)?,
            ToolName::WriteFile => {
                let path = str_arg(args, "path")?;
                let content = str_arg(args, "content")?;
                let abs = self.ws.write_file(path, content, Actor::Agent(agent)).map_err(exec_err)?;
                let rel = self.ws.relative(&abs);
                if agent.is_worker() && !content.trim().is_empty() {
                    self.effects.artifacts.push(rel.clone());
                }
                ToolResult::ok(format!("wrote {} chars to {rel}", content.chars().count()))
            }
            ToolName::ReadFile => ToolResult::ok(self.ws.read_file(str_arg(args, "path")?).map_err(exec_err)?),
            ToolName::ListFiles => {
                let dir = args.get("path").and_then(Value::as_str).unwrap_or(".");
                let files = self.ws.list_files(dir).map_err(exec_err)?;
                ToolResult::ok(if files.is_empty() {
                    "(no files)".to_string()
                } else {
                    files.join("\n")
                })
            }
            ToolName::SearchPapers => {
                let q = str_arg(args, "query")?;
                let limit = args.get("limit").and_then(Value::as_u64).unwrap_or(5).clamp(1, 20) as usize;
                let hits = self.papers.search(q, limit);
                let list: Vec<Value> = hits
                    .iter()
                    .map(|p| json!({"id": p.id, "title": p.title, "year": p.year}))
                    .collect();
                ToolResult::ok(serde_json::to_string_pretty(&list).expect("json"))
            }
            ToolName::GetPaper => {
                let id = str_arg(args, "paper_id")?;
                match self.papers.get(id) {
                    Some(p) => ToolResult::ok(serde_json::to_string_pretty(&p).expect("json")),
                    None => ToolResult::err("NotFound", format!("no paper `{id}`")),
                }
            }
            ToolName::RunShell => {
                let argv = argv_arg(args, "command")?;
                let timeout = args
                    .get("timeout_secs")
                    .and_then(Value::as_u64)
                    .map(Duration::from_secs)
                    .unwrap_or(self.exec.shell_timeout);
                let before = self.ws.snapshot_protected();
                let out = executor::run_command(self.ws, &argv, &[], timeout, "shell");
                let touched = self.ws.restore_protected(before);
                if !touched.is_empty() {
                    log::warn!("{agent:?} shell command modified protected files {touched:?}; restored");
                    return Err(exec_err(ExecError::ProtectedFileViolation(touched.join(", "))));
                }
                let out = out.map_err(exec_err)?;
                let status = match (out.exit_status, out.signal) {
                    (Some(c), _) => c.to_string(),
                    (None, Some(s)) => format!("signal {s}"),
                    _ => "unknown".into(),
                };
                ToolResult {
                    ok: out.success(),
                    content: format!(
                        "exit_status: {status}\nstdout (tail):\n{}\nstderr (tail):\n{}",
                        out.stdout_tail, out.stderr_tail
                    ),
                }
            }
            ToolName::LaunchExperiment => self.launch_experiment(agent, args)?,
        })
    }

    fn log_memory(&mut self, args: &Value) -> Result<ToolResult, ToolResult> {
        let section = str_arg(args, "section")?.trim().to_ascii_lowercase();
        let text = str_arg(args, "text")?;
        let entry = LogEntry::new(self.cycle, text, self.clock.now()).map_err(|e| ToolResult::err("InvalidEntry", e))?;
        let res = match section.as_str() {
            "decision" | "decisions" => self.memory.update(|log| {
                log.append_decision(entry);
                Ok(())
            }),
            "milestone" | "key_result" | "key_results" => self.memory.update(|log| log.append_key_result(entry).map(|_| ())),
            other => {
                return Err(ToolResult::err(
                    "InvalidArguments",
                    format!("section `{other}` must be decision or milestone"),
                ))
            }
        };
        match res {
            Ok(Ok(())) => {
                self.effects.memory_entries += 1;
                Ok(ToolResult::ok(format!("logged {section}")))
            }
            Ok(Err(e)) => Err(ToolResult::err("InvalidEntry", e)),
            Err(e) => Err(ToolResult::err("IoError", e)),
        }
    }

    /// Dry-run first, launch only on pass (or skip when dry-runs are off).
    fn launch_experiment(&mut self, agent: AgentKind, args: &Value) -> Result<ToolResult, ToolResult> {
        let argv = argv_arg(args, "command")?;
        let active = self.busy.or(self.effects.launched.as_ref().map(|(r, _)| r.id));
        if let Some(id) = active {
            return Err(exec_err(ExecError::WorkspaceBusy(id)));
        }
        self.effects.dry_runs_planned += 1;
        let verdict = executor::dry_run(self.ws, &argv, &self.exec);
        let (ok, outcome) = match &verdict {
            DryRunVerdict::Passed => (true, "passed".to_string()),
            DryRunVerdict::Skipped => (true, "skipped (dry-run disabled)".to_string()),
            DryRunVerdict::Failed { reason } => (false, keep_tail(reason, 300)),
        };
        self.trace.push(TraceEntry {
            agent,
            tool: "dry_run".into(),
            args: json!({"command": argv}),
            ok,
            outcome,
        });
        if let DryRunVerdict::Failed { reason } = &verdict {
            self.effects.dry_runs_caught += 1;
            return Err(exec_err(ExecError::DryRunNotPassed(reason.clone())));
        }
        let id = self.next_experiment_id;
        match executor::launch(self.ws, id, &argv, verdict, &self.exec, self.clock.now()) {
            Ok((record, handle)) => {
                self.next_experiment_id += 1;
                let msg = format!(
                    "launched exp{:03}: pid {} log {}",
                    record.id,
                    handle.pid,
                    record.log_path
                );
                self.effects.launched = Some((record, handle));
                Ok(ToolResult::ok(msg))
            }
            Err(e) => {
                self.effects.launch_errors.push(e.to_string());
                Err(exec_err(e))
            }
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agents::papers::OfflineCorpus;
    use crate::clock::SimClock;
    use autolab_core::memory::LogCaps;
    use chrono::{TimeZone, Utc};
    use std::fs;

    pub(crate) struct Fixture {
        pub dir: tempfile::TempDir,
        pub ws: Workspace,
        pub memory: MemoryStore,
        pub papers: OfflineCorpus,
        pub clock: SimClock,
    }

    impl Fixture {
        pub fn new() -> Self {
            let dir = tempfile::tempdir().unwrap();
            let ws = Workspace::open(dir.path()).unwrap();
            fs::write(ws.root().join("PROJECT_BRIEF.md"), "Improve CIFAR-100 accuracy.\n").unwrap();
            let memory = MemoryStore::open(
                &ws.root().join("PROJECT_BRIEF.md"),
                &ws.root().join("MEMORY_LOG.md"),
                3000,
                LogCaps::default(),
            )
            .unwrap();
            Fixture {
                dir,
                ws,
                memory,
                papers: OfflineCorpus::bundled(),
                clock: SimClock::new(Utc.with_ymd_and_hms(2026, 4, 7, 10, 0, 0).unwrap()),
            }
        }

        pub fn host(&mut self) -> ToolHost<'_> {
            ToolHost {
                ws: &self.ws,
                memory: &mut self.memory,
                papers: &self.papers,
                clock: &self.clock,
                exec: ExecSettings {
                    mandatory_dry_run: true,
                    dry_run_timeout: Duration::from_secs(10),
                    shell_timeout: Duration::from_secs(10),
                    gpu: None,
                },
                cycle: 1,
                busy: None,
                next_experiment_id: 1,
                effects: CycleEffects::default(),
                trace: Vec::new(),
            }
        }
    }

    pub(crate) fn call(name: &str, args: Value) -> ToolCall {
        ToolCall {
            id: "c".into(),
            name: name.into(),
            arguments: args,
        }
    }

    #[test]
    fn denied_tool_does_nothing() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let r = h.execute(AgentKind::Writing, &call("run_shell", json!({"command": ["touch", "x"]})));
        assert!(!r.ok);
        assert!(r.content.starts_with("error: ToolDenied"), "{}", r.content);
        assert_eq!(h.trace.len(), 1);
        drop(h);
        assert!(!f.dir.path().join("x").exists());
    }

    #[test]
    fn leader_logs_memory() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let r = h.execute(
            AgentKind::Leader,
            &call("log_memory", json!({"section": "decision", "text": "try cosine"})),
        );
        assert!(r.ok, "{}", r.content);
        let r = h.execute(AgentKind::Leader, &call("log_memory", json!({"section": "other", "text": "x"})));
        assert!(!r.ok);
        drop(h);
        let text = fs::read_to_string(f.dir.path().join("MEMORY_LOG.md")).unwrap();
        assert!(text.contains("try cosine"));
    }

    #[test]
    fn protected_write_is_a_tool_error() {
        let mut f = Fixture::new();
        let mut h = f.host();
        for agent in [AgentKind::Leader, AgentKind::Writing] {
            let r = h.execute(agent, &call("write_file", json!({"path": "PROJECT_BRIEF.md", "content": "x"})));
            assert!(r.content.starts_with("error: ProtectedFileViolation"), "{}", r.content);
        }
        let r = h.execute(
            AgentKind::Writing,
            &call("write_file", json!({"path": "reports/r.md", "content": "# r"})),
        );
        assert!(r.ok);
        assert_eq!(h.effects.artifacts, vec!["reports/r.md"]);
    }

    #[test]
    fn paper_tools() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let r = h.execute(AgentKind::Idea, &call("search_papers", json!({"query": "mixup"})));
        assert!(r.content.contains("1710.09412"));
        let r = h.execute(AgentKind::Idea, &call("get_paper", json!({"paper_id": "1710.09412"})));
        assert!(r.content.contains("convex combinations"));
    }

    #[test]
    fn launch_runs_dry_run_first_and_blocks_second() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let cmd = json!({"command": ["sh", "-c", "if [ \"$DRYRUN\" = 1 ]; then exit 0; fi; sleep 30"]});
        let r = h.execute(AgentKind::Code, &call("launch_experiment", cmd.clone()));
        assert!(r.ok, "{}", r.content);
        let tools: Vec<&str> = h.trace.iter().map(|t| t.tool.as_str()).collect();
        assert_eq!(tools, vec!["dry_run", "launch_experiment"]);
        let r = h.execute(AgentKind::Code, &call("launch_experiment", cmd));
        assert!(r.content.starts_with("error: WorkspaceBusy"), "{}", r.content);
        let (rec, mut handle) = h.effects.launched.take().unwrap();
        assert_eq!(rec.id, 1);
        assert_eq!(h.next_experiment_id, 2);
        let _ = handle.child.as_mut().unwrap().kill();
        let _ = handle.child.as_mut().unwrap().wait();
    }

    #[test]
    fn failing_dry_run_is_caught() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let cmd = json!({"command": ["sh", "-c", "echo 'ImportError: No module named torchx' >&2; exit 1"]});
        let r = h.execute(AgentKind::Code, &call("launch_experiment", cmd));
        assert!(r.content.contains("DryRunNotPassed"), "{}", r.content);
        assert!(r.content.contains("ImportError"));
        assert!(h.effects.launched.is_none());
        assert_eq!((h.effects.dry_runs_planned, h.effects.dry_runs_caught), (1, 1));
    }

    #[test]
    fn shell_string_and_bad_args() {
        let mut f = Fixture::new();
        let mut h = f.host();
        let r = h.execute(AgentKind::Code, &call("run_shell", json!({"command": "echo ok"})));
        assert!(r.ok);
        assert!(r.content.contains("exit_status: 0\nstdout (tail):\nok"));
        let r = h.execute(AgentKind::Code, &call("run_shell", json!({"command": 3})));
        assert!(r.content.starts_with("error: InvalidArguments"));
        let r = h.execute(AgentKind::Code, &call("read_file", json!({})));
        assert!(r.content.starts_with("error: InvalidArguments"));
    }

    #[test]
    fn shell_cannot_touch_protected_files() {
        let mut f = Fixture::new();
        let brief = f.ws.root().join("PROJECT_BRIEF.md");
        let before = fs::read(&brief).unwrap();
        let mut h = f.host();
        let cmd = json!({"command": ["sh", "-c", "echo hacked > PROJECT_BRIEF.md; echo {} > state.json"]});
        let r = h.execute(AgentKind::Code, &call("run_shell", cmd));
        assert!(r.content.starts_with("error: ProtectedFileViolation"), "{}", r.content);
        assert_eq!(fs::read(&brief).unwrap(), before);
        assert!(!f.ws.root().join("state.json").exists());
    }
}
