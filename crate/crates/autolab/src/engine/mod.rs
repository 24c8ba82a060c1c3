//! The main loop: directive, Think, Execute, Monitor, Reflect, cooldown.
//! State is persisted at every phase transition so a restarted daemon
//! continues where the last one stopped.

pub mod journal;
pub mod lock;
pub mod persist;

use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use autolab_core::backoff::cooldown_secs;
use autolab_core::config::{effective_gpu_set, Config};
use autolab_core::cost::{CostLedger, LlmPhase};
use autolab_core::directive::{render_directive_block, Directive, DIRECTIVE_FILE};
use autolab_core::memory::{render_memory, LogEntry};
use autolab_core::plan::{parse_plan, parse_reflection, CyclePlan, PlanAction, PLAN_FORMAT_REMINDER};
use autolab_core::roster::AgentKind;
use autolab_core::state::{
    CycleOutput, ExperimentRecord, LoopState, PendingReflect, Phase, RunLogs,
};
use autolab_core::text::keep_tail;
use chrono::{DateTime, Utc};

use crate::agents::{
    dispatch_worker, run_agent_step, AgentError, AgentSet, Conversation, CycleContext, CycleEffects, DefinitionError,
    PaperSearch, StepParams, ToolHost,
};
use crate::clock::Clock;
use crate::config_file::ProjectLayout;
use crate::control::{ledger_totals, ActiveSummary, Event, Hub, MemorySizes, MemoryView, StatusSnapshot};
use crate::directives::{DirectiveInbox, InboxError};
use crate::executor::{ExecSettings, ProcessHandle, Workspace};
use crate::fsutil::atomic_write;
use crate::llm::{Gateway, LlmBackend};
use crate::memory_store::{MemoryStore, StoreError};
use crate::monitor::{
    check_liveness, classify_exit, compile_patterns, extract_metrics, monitor_until_exit, tail_log, GpuProber,
    MetricPattern, MonitorJournal, MonitorSettings, PatternError, TAIL_LINES,
};
use crate::procfs;

use journal::{journal_tail, CycleJournal, JournalLine};
use lock::{LockError, WorkspaceLock};
use persist::{load_state, save_state, StateError};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Lock(#[from] LockError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Memory(#[from] StoreError),
    #[error(transparent)]
    Agents(#[from] DefinitionError),
    #[error(transparent)]
    Pattern(#[from] PatternError),
    #[error(transparent)]
    Directive(#[from] InboxError),
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] io::Error),
}

/// Everything the engine takes from outside, so tests can substitute a
/// scripted LLM and a simulated clock.
pub struct EngineDeps {
    pub clock: Arc<dyn Clock>,
    pub backend: Box<dyn LlmBackend>,
    pub papers: Box<dyn PaperSearch>,
    pub hub: Arc<Hub>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub cycles_completed: u64,
    pub stopped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flow {
    Continue,
    Stop,
}

/// Sleep `min(base * 2^k, 1800)` seconds, waking early when `interrupt`
/// fires. Returns the time actually slept.
pub fn smart_cooldown(burn_level: u32, base_secs: u64, clock: &dyn Clock, interrupt: &dyn Fn() -> bool) -> Duration {
    clock.sleep(Duration::from_secs(cooldown_secs(base_secs, burn_level)), interrupt)
}

pub struct Engine {
    cfg: Config,
    layout: ProjectLayout,
    ws: Workspace,
    memory: MemoryStore,
    agents: AgentSet,
    papers: Box<dyn PaperSearch>,
    gw: Gateway,
    clock: Arc<dyn Clock>,
    hub: Arc<Hub>,
    state: LoopState,
    inbox: DirectiveInbox,
    journal: CycleJournal,
    exec: ExecSettings,
    patterns: Vec<MetricPattern>,
    gpu: GpuProber,
    leader: Option<Conversation>,
    handle: Option<ProcessHandle>,
    phase_since: Option<DateTime<Utc>>,
    phase_hook: Option<PhaseHook>,
    _lock: WorkspaceLock,
}

/// Called after each phase transition is persisted.
pub type PhaseHook = Box<dyn FnMut(Phase, &LoopState) + Send>;

#[allow(clippy::too_many_arguments)]
fn tool_host<'a>(
    ws: &'a Workspace,
    memory: &'a mut MemoryStore,
    papers: &'a dyn PaperSearch,
    clock: &'a dyn Clock,
    exec: &ExecSettings,
    cycle: u64,
    busy: Option<u32>,
    next_experiment_id: u32,
) -> ToolHost<'a> {
    ToolHost {
        ws,
        memory,
        papers,
        clock,
        exec: exec.clone(),
        cycle,
        busy,
        next_experiment_id,
        effects: CycleEffects::default(),
        trace: Vec::new(),
    }
}

impl Engine {
    pub fn open(cfg: Config, base_dir: &Path, deps: EngineDeps) -> Result<Self, EngineError> {
        let layout = ProjectLayout::resolve(&cfg, base_dir);
        let mut ws = Workspace::open(&layout.workspace).map_err(|e| EngineError::Io(layout.workspace.clone(), e))?;
        if let Ok(rel) = layout.brief.strip_prefix(&layout.workspace) {
            ws.protect(&rel.to_string_lossy());
        }
        let lock = WorkspaceLock::acquire(&layout.lock)?;
        let memory = MemoryStore::open(
            &layout.brief,
            &layout.memory_log,
            cfg.memory.brief_max_chars,
            cfg.memory_caps(),
        )?;
        let agents = AgentSet::load(&layout.agents_dir)?;
        let state = match load_state(&layout.state)? {
            Some(s) => s,
            None => LoopState::new(CostLedger::new(cfg.pricing)),
        };
        let journal = CycleJournal::open(&layout.journal).map_err(|e| EngineError::Io(layout.journal.clone(), e))?;
        let mut gpu = GpuProber::new(cfg.monitor.gpu_probe.clone());
        let detected = if cfg.gpu.auto_detect { gpu.detect() } else { Vec::new() };
        let usable = effective_gpu_set(&cfg, &detected);
        let exec = ExecSettings {
            mandatory_dry_run: cfg.experiment.mandatory_dry_run,
            dry_run_timeout: Duration::from_secs(cfg.experiment.dry_run_timeout),
            shell_timeout: Duration::from_secs(cfg.experiment.shell_timeout),
            gpu: usable.first().copied(),
        };
        let patterns = compile_patterns(&cfg.monitor.metric_patterns)?;
        let gw = Gateway::new(deps.backend, deps.clock.clone());
        let e = Engine {
            cfg,
            layout,
            ws,
            memory,
            agents,
            papers: deps.papers,
            gw,
            clock: deps.clock,
            hub: deps.hub,
            state,
            inbox: DirectiveInbox::new(),
            journal,
            exec,
            patterns,
            gpu,
            leader: None,
            handle: None,
            phase_since: None,
            phase_hook: None,
            _lock: lock,
        };
        e.refresh_hub();
        Ok(e)
    }

    pub fn state(&self) -> &LoopState {
        &self.state
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gw
    }

    pub fn memory(&self) -> &MemoryStore {
        &self.memory
    }

    pub fn layout(&self) -> &ProjectLayout {
        &self.layout
    }

    pub fn hub(&self) -> &Arc<Hub> {
        &self.hub
    }

    pub fn on_transition(&mut self, hook: PhaseHook) {
        self.phase_hook = Some(hook);
    }

    /// Queue a one-time `--directive` for the next cycle.
    pub fn inject_cli_directive(&mut self, text: &str) -> Result<(), InboxError> {
        self.inbox.inject_cli(text)
    }

    /// Run until `max_cycles` cycles exist in total (-1: no limit) or a stop
    /// is requested. A cycle interrupted by a previous daemon is finished
    /// first, without repeating work already paid for.
    pub fn run(&mut self, max_cycles: i64) -> Result<RunSummary, EngineError> {
        let start = self.state.cycle;
        let limit_reached = |s: &LoopState| max_cycles >= 0 && s.cycle >= max_cycles as u64;
        let mut flow = self.recover()?;
        while flow == Flow::Continue {
            if !self.checkpoint() || limit_reached(&self.state) {
                break;
            }
            flow = self.run_cycle(true)?;
        }
        self.save()?;
        self.refresh_hub();
        Ok(RunSummary {
            cycles_completed: self.state.cycle - start,
            stopped: self.hub.control.stop_requested(),
        })
    }

    fn recover(&mut self) -> Result<Flow, EngineError> {
        let t = self.state.cycle;
        match self.state.phase {
            Phase::Idle => Ok(Flow::Continue),
            Phase::Cooldown => {
                log::info!("restarted during cooldown of cycle {t}; starting the next cycle");
                self.finish_cycle()?;
                Ok(Flow::Continue)
            }
            Phase::Think => {
                log::info!("restarted during think of cycle {t}; planning it again");
                self.run_cycle(false)
            }
            Phase::Execute | Phase::Monitor if self.state.active_experiment.is_some() => {
                let rec = self.state.active_experiment.clone().expect("checked");
                let alive = rec.pid.is_some_and(|pid| check_liveness(pid, rec.start_time));
                if alive {
                    log::info!(
                        "restarted with exp{:03} (pid {:?}) still running; resuming monitor",
                        rec.id,
                        rec.pid
                    );
                    self.transition(Phase::Monitor, &format!("resumed monitoring exp{:03} after restart", rec.id))?;
                    if self.monitor_phase(t)? == Flow::Stop {
                        return Ok(Flow::Stop);
                    }
                } else {
                    log::info!("exp{:03} ended while the daemon was down", rec.id);
                    self.collect_finished_run(&rec);
                }
                self.reflect_and_close(t)
            }
            Phase::Execute => {
                if let Some(p) = self.state.pending.as_mut() {
                    p.summary.push_str("\n(execute interrupted by a daemon restart; worker results lost)");
                }
                self.reflect_and_close(t)
            }
            Phase::Monitor | Phase::Reflect => self.reflect_and_close(t),
        }
    }

    /// Stop and pause handling at a phase boundary. Returns false to stop.
    fn checkpoint(&mut self) -> bool {
        let ctl = &self.hub.control;
        if ctl.stop_requested() {
            return false;
        }
        if ctl.is_paused() {
            self.state.paused = true;
            let _ = self.save();
            self.refresh_hub();
            log::info!("paused at cycle boundary");
            while self.hub.control.is_paused() && !self.hub.control.stop_requested() {
                let hub = self.hub.clone();
                self.clock
                    .sleep(Duration::from_secs(1), &|| !hub.control.is_paused() || hub.control.stop_requested());
                std::thread::sleep(Duration::from_millis(5));
            }
            self.state.paused = false;
            let _ = self.save();
            self.refresh_hub();
        }
        !self.hub.control.stop_requested()
    }

    fn run_cycle(&mut self, fresh: bool) -> Result<Flow, EngineError> {
        if fresh {
            self.state.cycle += 1;
        }
        let t = self.state.cycle;
        self.leader = None;

        let directive = match self.inbox.consume(self.ws.root(), self.clock.as_ref()) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("directive not consumed this cycle: {e}");
                None
            }
        };
        if directive.is_some() {
            self.state.directives_consumed += 1;
        }
        if self.memory.changed_on_disk() {
            match self.memory.reload() {
                Ok(true) => log::info!("memory log edited by hand; reloaded"),
                Ok(false) => {}
                Err(e) => log::warn!("memory reload failed: {e}"),
            }
        }
        if let Err(e) = self.memory.verify_brief() {
            log::warn!("{e}; the brief loaded at startup stays in use");
        }

        let dsum = match &directive {
            Some(d) => format!("directive from {:?}", d.source).to_lowercase(),
            None => "no directive".into(),
        };
        self.transition(Phase::Think, &dsum)?;
        let plan = match self.think(t, directive.as_ref()) {
            Ok(p) => p,
            Err(e) => return self.cycle_failed("think", &e.to_string()),
        };

        if plan.action == PlanAction::Wait {
            self.log_decision(t, &format!("wait: {}", plan.rationale));
            let k = self.state.burn_level;
            let secs = cooldown_secs(self.cfg.agent.cooldown_interval, k);
            self.state.settle_burn(&CycleOutput::default());
            self.transition(Phase::Cooldown, &format!("{secs}s (burn level {k})"))?;
            self.leader = None;
            self.cooldown(k);
            self.finish_cycle()?;
            return Ok(Flow::Continue);
        }

        self.state.pending = Some(PendingReflect {
            plan_rationale: plan.rationale.clone(),
            summary: String::new(),
            output: CycleOutput::default(),
            logs: None,
        });
        self.transition(Phase::Execute, &format!("{} task(s): {}", plan.tasks.len(), plan.rationale))?;
        self.execute(t, &plan)?;

        if let Some(rec) = self.state.active_experiment.clone() {
            self.transition(
                Phase::Monitor,
                &format!("exp{:03} pid {}", rec.id, rec.pid.map_or("-".into(), |p| p.to_string())),
            )?;
            if self.monitor_phase(t)? == Flow::Stop {
                return Ok(Flow::Stop);
            }
        }
        self.reflect_and_close(t)
    }

    fn think(&mut self, t: u64, directive: Option<&Directive>) -> Result<CyclePlan, AgentError> {
        let def = self.agents.get(AgentKind::Leader).clone();
        let model = self.cfg.resolve_model(&def.model).to_string();
        let mut conv = Conversation::new(def, t);
        let mut input = String::new();
        if let Some(d) = directive {
            input.push_str(&render_directive_block(d));
            input.push('\n');
        }
        let _ = write!(
            input,
            "## Cycle {t}\n{}\n## Status\nburn level: {}; dry-runs caught/planned: {}/{}\n\nPlan this cycle. End with the plan block (action, rationale, task lines).",
            render_memory(self.memory.brief(), self.memory.log()),
            self.state.burn_level,
            self.state.dry_runs.caught,
            self.state.dry_runs.planned,
        );
        let params = StepParams {
            phase: LlmPhase::Think,
            model: &model,
            max_rounds: self.cfg.agent.max_tool_rounds,
        };
        let max_tasks = self.cfg.agent.max_steps_per_cycle as usize;
        let busy = self.state.active_experiment.as_ref().map(|r| r.id);
        let mut host = tool_host(
            &self.ws,
            &mut self.memory,
            self.papers.as_ref(),
            self.clock.as_ref(),
            &self.exec,
            t,
            busy,
            self.state.next_experiment_id,
        );
        let reply = run_agent_step(&mut conv, &input, &mut host, &mut self.gw, &mut self.state.ledger, params)?;
        let plan = match parse_plan(&reply, max_tasks) {
            Ok(p) => p,
            Err(first) => {
                log::warn!("plan unparseable ({first}); asking once more");
                let again =
                    run_agent_step(&mut conv, PLAN_FORMAT_REMINDER, &mut host, &mut self.gw, &mut self.state.ledger, params)?;
                match parse_plan(&again, max_tasks) {
                    Ok(p) => p,
                    Err(second) => {
                        log::warn!("plan unparseable twice ({second}); waiting this cycle");
                        CyclePlan::wait(format!("plan unparseable: {second}"))
                    }
                }
            }
        };
        self.leader = Some(conv);
        Ok(plan)
    }

    fn execute(&mut self, t: u64, plan: &CyclePlan) -> Result<(), EngineError> {
        let busy = self.state.active_experiment.as_ref().map(|r| r.id);
        let mut host = tool_host(
            &self.ws,
            &mut self.memory,
            self.papers.as_ref(),
            self.clock.as_ref(),
            &self.exec,
            t,
            busy,
            self.state.next_experiment_id,
        );
        let mut cx = CycleContext::new(t, self.cfg.agent.max_steps_per_cycle);
        let cfg = &self.cfg;
        let model_for = |d: &crate::agents::AgentDefinition| cfg.resolve_model(&d.model).to_string();
        let mut parts = Vec::new();
        for (i, task) in plan.tasks.iter().enumerate() {
            if self.hub.control.stop_requested() {
                parts.push(format!("[{}] {}: skipped (stop requested)", i + 1, task.worker));
                continue;
            }
            let res = dispatch_worker(
                &mut cx,
                task,
                &self.agents,
                &model_for,
                cfg.agent.max_tool_rounds,
                &mut host,
                &mut self.gw,
                &mut self.state.ledger,
            );
            let mut launch_failed = false;
            let part = match res {
                Ok(done) => format!(
                    "[{}] {}: {}\n{}\n{}",
                    i + 1,
                    done.worker,
                    done.instruction,
                    trace_line(&done.tool_call_trace),
                    done.result
                ),
                Err(AgentError::WorkerFailed { task: done, reason }) => {
                    launch_failed = done.tool_call_trace.iter().any(|e| e.tool == "launch_experiment" && !e.ok)
                        && !host.effects.launch_errors.is_empty();
                    format!(
                        "[{}] {}: {}\n{}\nFAILED: {reason}",
                        i + 1,
                        done.worker,
                        done.instruction,
                        trace_line(&done.tool_call_trace)
                    )
                }
                Err(e) => format!("[{}] {}: FAILED: {e}", i + 1, task.worker),
            };
            parts.push(part);
            if let Some((rec, _)) = &host.effects.launched {
                if self.state.active_experiment.is_none() {
                    // persisted at once so a crash here cannot orphan the run
                    self.state.active_experiment = Some(rec.clone());
                    self.state.next_experiment_id = host.next_experiment_id;
                    save_state(&self.layout.state, &self.state)?;
                }
            }
            if launch_failed {
                parts.push("remaining tasks skipped: the launching task failed".into());
                break;
            }
        }
        let effects = std::mem::take(&mut host.effects);
        self.state.next_experiment_id = host.next_experiment_id;
        drop(host);
        self.state.dry_runs.planned += effects.dry_runs_planned;
        self.state.dry_runs.caught += effects.dry_runs_caught;
        let output = CycleOutput {
            launched: effects.launched.is_some(),
            dry_run_caught: effects.dry_runs_caught > 0,
            milestone: false,
            artifact: !effects.artifacts.is_empty(),
        };
        if let Some((_, handle)) = effects.launched {
            self.handle = Some(handle);
        }
        if let Some(p) = self.state.pending.as_mut() {
            p.summary = parts.join("\n\n");
            p.output = output;
        }
        Ok(())
    }

    fn monitor_phase(&mut self, t: u64) -> Result<Flow, EngineError> {
        let mut rec = self.state.active_experiment.clone().expect("monitor needs an experiment");
        let pid = rec.pid.unwrap_or(0);
        let mut handle = match self.handle.take() {
            Some(h) if h.pid == pid => h,
            _ => ProcessHandle::adopt(pid, rec.start_time),
        };
        let log_path = self.ws.root().join(&rec.log_path);
        let journal_path = self.ws.root().join(ExperimentRecord::monitor_journal_path(rec.id));
        let mut mj = MonitorJournal::open(&journal_path).map_err(|e| EngineError::Io(journal_path.clone(), e))?;
        let mut settings = MonitorSettings {
            poll_interval: Duration::from_secs(self.cfg.monitor.poll_interval),
            patterns: self.patterns.clone(),
            gpu: self.gpu.clone(),
            gpu_index: self.exec.gpu,
        };
        let hub = self.hub.clone();
        let ledger_before = self.state.ledger.clone();
        let id = rec.id;
        let outcome = monitor_until_exit(
            &mut handle,
            &log_path,
            &mut mj,
            &mut settings,
            self.clock.as_ref(),
            &|| hub.control.stop_requested(),
            &mut |r| {
                hub.update(|s| {
                    s.status.active_experiment = Some(ActiveSummary {
                        id,
                        pid: Some(pid),
                        alive: r.alive,
                        log_path: rec.log_path.clone(),
                        polls: r.poll,
                        stalled: r.stalled,
                        latest_metrics: r.latest_metrics.clone(),
                    });
                });
                hub.publish(&Event::Monitor {
                    at: r.at,
                    cycle: t,
                    poll: r.poll,
                    alive: r.alive,
                    gpu_active: r.gpu_active,
                    stalled: r.stalled,
                    latest_metrics: r.latest_metrics.clone(),
                });
            },
        );
        self.gpu = settings.gpu;
        debug_assert_eq!(ledger_before, self.state.ledger, "monitoring must not touch the ledger");
        if !outcome.finished {
            if self.hub.control.kill_active_requested() {
                log::warn!("stop with kill: killing exp{:03} (pid {pid})", rec.id);
                procfs::kill_group(pid as i32);
                if let Some(c) = handle.child.as_mut() {
                    let _ = c.wait();
                }
            } else {
                log::info!("stopping; exp{:03} (pid {pid}) keeps running and will be re-adopted", rec.id);
            }
            self.handle = Some(handle);
            self.save()?;
            return Ok(Flow::Stop);
        }
        log::info!(
            "exp{:03} ended ({:?}) after {} polls, 0 LLM calls",
            rec.id,
            outcome.exit_class,
            outcome.stats.polls
        );
        rec.exit_status = outcome.exit_status;
        rec.exit_class = Some(outcome.exit_class);
        rec.metrics = outcome.metrics.clone();
        self.write_record(&rec);
        self.state.active_experiment = Some(rec.clone());
        if let Some(p) = self.state.pending.as_mut() {
            p.logs = Some(RunLogs {
                experiment_id: rec.id,
                exit_status: outcome.exit_status,
                exit_class: outcome.exit_class,
                stalled: outcome.stalled,
                metrics: outcome.metrics,
                tail: outcome.tail,
            });
        }
        Ok(Flow::Continue)
    }

    /// For a run that ended while no daemon watched it.
    fn collect_finished_run(&mut self, rec: &ExperimentRecord) {
        let tail = tail_log(&self.ws.root().join(&rec.log_path), TAIL_LINES)
            .map(|t| t.lines)
            .unwrap_or_default();
        let metrics = extract_metrics(&tail, &self.patterns);
        let class = classify_exit(None, None, &tail);
        let mut rec = rec.clone();
        rec.exit_class = Some(class);
        rec.metrics = metrics.clone();
        self.write_record(&rec);
        self.state.active_experiment = Some(rec.clone());
        let pending = self.state.pending.get_or_insert_with(|| PendingReflect {
            plan_rationale: String::new(),
            summary: String::new(),
            output: CycleOutput {
                launched: true,
                ..CycleOutput::default()
            },
            logs: None,
        });
        pending.logs = Some(RunLogs {
            experiment_id: rec.id,
            exit_status: None,
            exit_class: class,
            stalled: false,
            metrics,
            tail,
        });
    }

    fn write_record(&self, rec: &ExperimentRecord) {
        let path = self.ws.root().join(ExperimentRecord::run_dir(rec.id)).join("record.json");
        let text = serde_json::to_string_pretty(rec).expect("record serializes");
        if let Err(e) = atomic_write(&path, text.as_bytes()) {
            log::warn!("{}: {e}", path.display());
        }
    }

    fn reflect_and_close(&mut self, t: u64) -> Result<Flow, EngineError> {
        if self.state.pending.is_none() {
            self.finish_cycle()?;
            return Ok(Flow::Continue);
        }
        self.transition(Phase::Reflect, "")?;
        let forced_burn = match self.reflect(t) {
            Ok(milestone) => {
                if let Some(p) = self.state.pending.as_mut() {
                    p.output.milestone = milestone;
                }
                false
            }
            Err(e) => {
                log::warn!("reflect failed: {e}");
                self.log_decision(t, &format!("reflect failed cycle {t}: {}", keep_tail(&e.to_string(), 200)));
                true
            }
        };
        self.leader = None;
        let output = self.state.pending.as_ref().map(|p| p.output).unwrap_or_default();
        let k = self.state.burn_level;
        if forced_burn {
            self.state.burn_level = k.saturating_add(1);
        } else {
            self.state.settle_burn(&output);
        }
        self.state.active_experiment = None;
        self.finish_cycle()?;
        if self.state.burn_level > 0 {
            let secs = cooldown_secs(self.cfg.agent.cooldown_interval, k);
            self.journal_line(Phase::Idle, &format!("anti-burn backoff {secs}s (burn level {k})"));
            self.cooldown(k);
        }
        Ok(Flow::Continue)
    }

    /// Returns whether a milestone was recorded.
    fn reflect(&mut self, t: u64) -> Result<bool, AgentError> {
        let pending = self.state.pending.clone().expect("reflect needs a pending cycle");
        let mut input = String::new();
        let mut conv = match self.leader.take() {
            Some(c) => c,
            None => {
                let def = self.agents.get(AgentKind::Leader).clone();
                let _ = writeln!(
                    input,
                    "## Cycle {t}\n{}",
                    render_memory(self.memory.brief(), self.memory.log())
                );
                Conversation::new(def, t)
            }
        };
        input.push_str(&reflect_prompt(t, &pending));
        let model = self.cfg.resolve_model(&conv.agent.model).to_string();
        let params = StepParams {
            phase: LlmPhase::Reflect,
            model: &model,
            max_rounds: self.cfg.agent.max_tool_rounds,
        };
        let mut host = tool_host(
            &self.ws,
            &mut self.memory,
            self.papers.as_ref(),
            self.clock.as_ref(),
            &self.exec,
            t,
            self.state.active_experiment.as_ref().map(|r| r.id),
            self.state.next_experiment_id,
        );
        let reply = run_agent_step(&mut conv, &input, &mut host, &mut self.gw, &mut self.state.ledger, params)?;
        drop(host);
        let r = parse_reflection(&reply).unwrap_or_else(|_| autolab_core::plan::Reflection {
            milestone: None,
            decision: format!("no decision given in cycle {t}"),
        });
        let mut milestone = false;
        if let Some(m) = &r.milestone {
            match LogEntry::new(t, m, self.clock.now()) {
                Ok(entry) => match self.memory.update(|log| log.append_key_result(entry)) {
                    Ok(Ok(_)) => milestone = true,
                    Ok(Err(e)) => log::warn!("milestone rejected: {e}"),
                    Err(e) => log::warn!("memory write failed: {e}"),
                },
                Err(e) => log::warn!("milestone rejected: {e}"),
            }
        }
        self.log_decision(t, &r.decision);
        Ok(milestone)
    }

    fn log_decision(&mut self, t: u64, text: &str) {
        let entry = match LogEntry::new(t, text, self.clock.now()) {
            Ok(e) => e,
            Err(_) => LogEntry::new(t, &format!("cycle {t}: (empty decision)"), self.clock.now()).expect("non-empty"),
        };
        if let Err(e) = self.memory.update(|log| log.append_decision(entry)) {
            log::warn!("memory write failed: {e}");
        }
    }

    fn cooldown(&mut self, burn_level: u32) {
        let hub = self.hub.clone();
        let directive = self.ws.root().join(DIRECTIVE_FILE);
        let interrupt =
            || hub.control.stop_requested() || hub.control.is_paused() || directive.exists();
        let slept = smart_cooldown(burn_level, self.cfg.agent.cooldown_interval, self.clock.as_ref(), &interrupt);
        log::info!("cooldown: slept {}s", slept.as_secs());
    }

    fn cycle_failed(&mut self, phase: &str, err: &str) -> Result<Flow, EngineError> {
        log::error!("cycle {} failed in {phase}: {err}", self.state.cycle);
        let k = self.state.burn_level;
        self.state.burn_level = k.saturating_add(1);
        self.state.pending = None;
        self.leader = None;
        self.journal_line(Phase::Idle, &format!("error in {phase}: {}", keep_tail(err, 200)));
        self.finish_cycle()?;
        let hub = self.hub.clone();
        smart_cooldown(k, self.cfg.agent.cooldown_interval, self.clock.as_ref(), &|| {
            hub.control.stop_requested()
        });
        Ok(Flow::Continue)
    }

    fn finish_cycle(&mut self) -> Result<(), EngineError> {
        self.state.pending = None;
        self.state.phase = Phase::Idle;
        self.phase_since = Some(self.clock.now());
        self.save()?;
        self.refresh_hub();
        Ok(())
    }

    fn transition(&mut self, phase: Phase, summary: &str) -> Result<(), EngineError> {
        self.state.phase = phase;
        self.save()?;
        if let Some(h) = self.phase_hook.as_mut() {
            h(phase, &self.state);
        }
        self.journal_line(phase, summary);
        self.refresh_hub();
        Ok(())
    }

    fn journal_line(&mut self, phase: Phase, summary: &str) {
        let at = self.clock.now();
        self.phase_since = Some(at);
        let line = JournalLine {
            at,
            cycle: self.state.cycle,
            phase,
            summary: summary.to_string(),
        };
        if let Err(e) = self.journal.append(&line) {
            log::warn!("cycle journal: {e}");
        }
        self.hub.publish(&Event::Phase {
            at,
            cycle: line.cycle,
            phase,
            summary: line.summary,
        });
    }

    fn save(&self) -> Result<(), EngineError> {
        save_state(&self.layout.state, &self.state)?;
        Ok(())
    }

    fn refresh_hub(&self) {
        let status = self.status_snapshot();
        let memory = MemoryView {
            brief: self.memory.brief().content().to_string(),
            log: self.memory.log().render(),
            render_chars: self.memory.render().chars().count(),
            sizes: status.memory.clone(),
        };
        let ledger = self.state.ledger.clone();
        self.hub.update(|s| {
            let live = s.status.active_experiment.take();
            s.status = status;
            // keep the monitor's latest view if it concerns the same run
            if let (Some(new), Some(old)) = (s.status.active_experiment.as_mut(), live) {
                if new.id == old.id {
                    *new = old;
                }
            }
            s.memory = memory;
            s.ledger = ledger;
        });
    }

    pub fn status_snapshot(&self) -> StatusSnapshot {
        let log = self.memory.log();
        let caps = log.caps();
        let s = &self.state;
        StatusSnapshot {
            project: self.cfg.project.name.clone(),
            cycle: s.cycle,
            phase: s.phase,
            phase_since: self.phase_since,
            paused: s.paused,
            burn_level: s.burn_level,
            next_cooldown_secs: cooldown_secs(self.cfg.agent.cooldown_interval, s.burn_level),
            active_experiment: s.active_experiment.as_ref().map(|r| ActiveSummary {
                id: r.id,
                pid: r.pid,
                alive: r.pid.is_some_and(|p| check_liveness(p, r.start_time)),
                log_path: r.log_path.clone(),
                polls: 0,
                stalled: false,
                latest_metrics: r.metrics.clone(),
            }),
            memory: MemorySizes {
                brief_chars: self.memory.brief().chars(),
                brief_cap: self.cfg.memory.brief_max_chars,
                log_chars: log.rendered_chars(),
                log_cap: caps.log_max_chars,
                key_results_chars: log.key_results_chars(),
                key_results_cap: caps.milestone_max_chars,
                decisions: log.recent_decisions().len(),
                decisions_cap: caps.max_recent_entries,
            },
            ledger: ledger_totals(&s.ledger),
            llm_calls: s.ledger.total_calls(),
            directive_pending: self.ws.root().join(DIRECTIVE_FILE).exists(),
            directives_consumed: s.directives_consumed,
            recent_cycles: journal_tail(&self.layout.journal, 5),
        }
    }
}

fn trace_line(trace: &[crate::agents::TraceEntry]) -> String {
    if trace.is_empty() {
        return "tools: none".into();
    }
    let items: Vec<String> = trace
        .iter()
        .map(|e| format!("{}={}", e.tool, if e.ok { "ok" } else { "err" }))
        .collect();
    format!("tools: {}", items.join(", "))
}

fn reflect_prompt(t: u64, p: &PendingReflect) -> String {
    let mut s = format!("## Results of cycle {t}\nPlan: {}\n\n### Worker results\n", p.plan_rationale);
    s.push_str(if p.summary.trim().is_empty() { "(none)" } else { p.summary.trim() });
    s.push_str("\n\n");
    match &p.logs {
        Some(l) => {
            let metrics: Vec<String> = l.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let status = l.exit_status.map_or("unknown".into(), |c| c.to_string());
            let _ = write!(
                s,
                "### Training run exp{:03}\nended: {:?} (exit status {status}){}\nmetrics: {}\nlast {} log lines:\n{}\n\n",
                l.experiment_id,
                l.exit_class,
                if l.stalled { "; GPU idle while alive (possible silent stall)" } else { "" },
                if metrics.is_empty() { "none found".into() } else { metrics.join(", ") },
                l.tail.len(),
                l.tail.join("\n"),
            );
        }
        None => s.push_str("No training run this cycle.\n\n"),
    }
    s.push_str("Reply with `milestone:` (only for a significant result) and `decision:` lines.");
    s
}
