//! Agent conversations: the tool loop of one step, and worker dispatch.

use autolab_core::cost::{CostLedger, LlmPhase};
use autolab_core::plan::TaskSpec;
use autolab_core::roster::{AgentKind, Message};
use autolab_core::text::truncate_with_ellipsis;
use serde::{Deserialize, Serialize};

use super::definition::{AgentDefinition, AgentSet};
use super::tools::{ToolHost, TraceEntry};
use crate::llm::{Gateway, GatewayError};

pub const WORKER_RESULT_MAX_CHARS: usize = 1000;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    Llm(#[from] GatewayError),
    #[error("{agent} used all {rounds} tool rounds without a final reply")]
    StepBudgetExceeded { agent: AgentKind, rounds: u32 },
    #[error("dispatch budget of {max} worker tasks per cycle exhausted")]
    DispatchBudgetExhausted { max: u32 },
    #[error("{} failed: {reason}", .task.worker)]
    WorkerFailed { task: Box<WorkerTask>, reason: String },
}

#[derive(Debug, Clone)]
pub struct Conversation {
    pub agent: AgentDefinition,
    pub transcript: Vec<Message>,
    pub cycle_id: u64,
}

impl Conversation {
    pub fn new(agent: AgentDefinition, cycle_id: u64) -> Self {
        Conversation {
            agent,
            transcript: Vec::new(),
            cycle_id,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct StepParams<'a> {
    pub phase: LlmPhase,
    pub model: &'a str,
    pub max_rounds: u32,
}

/// Add `user_input` and run LLM call / tool round trips until the model
/// answers without tool calls. Returns that final text.
pub fn run_agent_step(
    conv: &mut Conversation,
    user_input: &str,
    host: &mut ToolHost,
    gw: &mut Gateway,
    ledger: &mut CostLedger,
    p: StepParams,
) -> Result<String, AgentError> {
    conv.transcript.push(Message::user(user_input));
    // only the allowlist is ever offered
    let tools = conv.agent.tool_schemas();
    let kind = conv.agent.kind;
    let mut rounds = 0;
    loop {
        let reply = gw.call(
            p.phase,
            kind,
            p.model,
            &conv.agent.system_prompt,
            &conv.transcript,
            &tools,
            ledger,
        )?;
        let calls = reply.tool_calls.clone();
        let text = reply.content.clone();
        conv.transcript.push(reply);
        if calls.is_empty() {
            return Ok(text);
        }
        for c in &calls {
            let r = host.execute(kind, c);
            conv.transcript.push(Message::tool_result(c.id.clone(), r.content));
        }
        rounds += 1;
        if rounds >= p.max_rounds {
            return Err(AgentError::StepBudgetExceeded {
                agent: kind,
                rounds,
            });
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerTask {
    pub worker: AgentKind,
    pub instruction: String,
    /// The worker's final message, at most [`WORKER_RESULT_MAX_CHARS`].
    pub result: String,
    pub tool_call_trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CycleContext {
    pub cycle: u64,
    pub dispatch_count: u32,
    pub max_dispatch: u32,
}

impl CycleContext {
    pub fn new(cycle: u64, max_dispatch: u32) -> Self {
        CycleContext {
            cycle,
            dispatch_count: 0,
            max_dispatch,
        }
    }
}

pub fn worker_prompt(instruction: &str) -> String {
    format!("Task from the leader:\n{instruction}\n\nWhen finished, reply with a short summary of what you did and the outcome.")
}

/// Run one task on a fresh worker conversation, discarded afterwards.
/// A failed step, or a launch that failed after its dry-run passed, is a
/// WorkerFailed carrying the trace.
pub fn dispatch_worker(
    cx: &mut CycleContext,
    task: &TaskSpec,
    agents: &AgentSet,
    model_for: &dyn Fn(&AgentDefinition) -> String,
    max_rounds: u32,
    host: &mut ToolHost,
    gw: &mut Gateway,
    ledger: &mut CostLedger,
) -> Result<WorkerTask, AgentError> {
    if cx.dispatch_count >= cx.max_dispatch {
        return Err(AgentError::DispatchBudgetExhausted { max: cx.max_dispatch });
    }
    assert!(task.worker.is_worker(), "the leader is not dispatchable");
    cx.dispatch_count += 1;
    let def = agents.get(task.worker).clone();
    let model = model_for(&def);
    let mut conv = Conversation::new(def, cx.cycle);
    let trace_start = host.trace.len();
    let launch_errors = host.effects.launch_errors.len();
    let outcome = run_agent_step(
        &mut conv,
        &worker_prompt(&task.instruction),
        host,
        gw,
        ledger,
        StepParams {
            phase: LlmPhase::Execute,
            model: &model,
            max_rounds,
        },
    );
    let mut done = WorkerTask {
        worker: task.worker,
        instruction: task.instruction.clone(),
        result: String::new(),
        tool_call_trace: host.trace[trace_start..].to_vec(),
    };
    match outcome {
        Ok(text) => {
            done.result = truncate_with_ellipsis(text.trim(), WORKER_RESULT_MAX_CHARS);
            if let Some(e) = host.effects.launch_errors.get(launch_errors) {
                let reason = format!("launch failed after dry-run: {e}");
                return Err(AgentError::WorkerFailed {
                    task: Box::new(done),
                    reason,
                });
            }
            Ok(done)
        }
        Err(e) => {
            let reason = e.to_string();
            done.result = truncate_with_ellipsis(&reason, WORKER_RESULT_MAX_CHARS);
            Err(AgentError::WorkerFailed {
                task: Box::new(done),
                reason,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::tools::tests::Fixture;
    use crate::clock::SimClock;
    use crate::llm::MockBackend;
    use autolab_core::cost::Pricing;
    use std::sync::Arc;

    fn gateway(yaml: &str, clock: &SimClock) -> (Gateway, crate::llm::RequestLog) {
        let m = MockBackend::from_yaml(yaml).unwrap();
        let log = m.request_log();
        (Gateway::new(Box::new(m), Arc::new(clock.clone())), log)
    }

    fn model(_: &AgentDefinition) -> String {
        "m".into()
    }

    #[test]
    fn plain_reply_is_one_call() {
        let mut f = Fixture::new();
        let (mut gw, log) = gateway("- reply: all good\n", &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut conv = Conversation::new(AgentDefinition::builtin(AgentKind::Leader), 1);
        let mut host = f.host();
        let p = StepParams {
            phase: LlmPhase::Think,
            model: "m",
            max_rounds: 10,
        };
        let text = run_agent_step(&mut conv, "hi", &mut host, &mut gw, &mut ledger, p).unwrap();
        assert_eq!(text, "all good");
        assert_eq!(log.len(), 1);
        assert_eq!(conv.transcript.len(), 2);
        assert_eq!(ledger.total_calls(), 1);
    }

    #[test]
    fn denied_tool_is_fed_back_and_conversation_continues() {
        let mut f = Fixture::new();
        let yaml = r#"
- tool_calls: [{name: run_shell, arguments: {command: ["ls"]}}]
- expect: "ToolDenied"
  reply: "ok, writing instead"
"#;
        let (mut gw, log) = gateway(yaml, &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut cx = CycleContext::new(1, 3);
        let task = TaskSpec {
            worker: AgentKind::Writing,
            instruction: "summarize".into(),
        };
        let mut host = f.host();
        let done = dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 10, &mut host, &mut gw, &mut ledger).unwrap();
        assert_eq!(done.result, "ok, writing instead");
        assert_eq!(done.tool_call_trace.len(), 1);
        assert!(!done.tool_call_trace[0].ok);
        // allowlist soundness: only the writing roster was ever offered
        for rq in log.requests() {
            let names: Vec<&str> = rq.tools.iter().map(|t| t.name.as_str()).collect();
            assert_eq!(names, vec!["write_file", "read_file", "list_files"]);
        }
        assert_eq!(cx.dispatch_count, 1);
    }

    #[test]
    fn fourth_dispatch_refused() {
        let mut f = Fixture::new();
        let (mut gw, _) = gateway("- reply: done\n- reply: done\n- reply: done\n", &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut cx = CycleContext::new(1, 3);
        let task = TaskSpec {
            worker: AgentKind::Writing,
            instruction: "t".into(),
        };
        let mut host = f.host();
        for _ in 0..3 {
            dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 10, &mut host, &mut gw, &mut ledger).unwrap();
        }
        let e = dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 10, &mut host, &mut gw, &mut ledger).unwrap_err();
        assert!(matches!(e, AgentError::DispatchBudgetExhausted { max: 3 }));
    }

    #[test]
    fn step_budget_and_worker_failure() {
        let mut f = Fixture::new();
        let yaml = "- tool_calls: [{name: list_files, arguments: {}}]\n".repeat(3);
        let (mut gw, _) = gateway(&yaml, &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut cx = CycleContext::new(1, 3);
        let task = TaskSpec {
            worker: AgentKind::Writing,
            instruction: "loop".into(),
        };
        let mut host = f.host();
        match dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 3, &mut host, &mut gw, &mut ledger) {
            Err(AgentError::WorkerFailed { task, reason }) => {
                assert_eq!(task.tool_call_trace.len(), 3);
                assert!(reason.contains("3 tool rounds"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn long_result_truncated() {
        let mut f = Fixture::new();
        let yaml = format!("- reply: \"{}\"\n", "r".repeat(1500));
        let (mut gw, _) = gateway(&yaml, &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut cx = CycleContext::new(1, 3);
        let task = TaskSpec {
            worker: AgentKind::Idea,
            instruction: "t".into(),
        };
        let mut host = f.host();
        let done = dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 10, &mut host, &mut gw, &mut ledger).unwrap();
        assert_eq!(done.result.chars().count(), WORKER_RESULT_MAX_CHARS);
        assert!(done.result.ends_with('…'));
    }

    #[test]
    fn code_task_trace_has_dry_run_then_launch() {
        let mut f = Fixture::new();
        let yaml = r#"
- tool_calls: [{name: launch_experiment, arguments: {command: ["sh", "-c", "[ \"$DRYRUN\" = 1 ] && exit 0; sleep 30"]}}]
- expect: "launched exp001"
  reply: "launched"
"#;
        let (mut gw, _) = gateway(yaml, &f.clock);
        let mut ledger = CostLedger::new(Pricing::default());
        let mut cx = CycleContext::new(1, 3);
        let task = TaskSpec {
            worker: AgentKind::Code,
            instruction: "fix lr config and launch".into(),
        };
        let mut host = f.host();
        let done = dispatch_worker(&mut cx, &task, &AgentSet::builtin(), &model, 10, &mut host, &mut gw, &mut ledger).unwrap();
        let tools: Vec<&str> = done.tool_call_trace.iter().map(|t| t.tool.as_str()).collect();
        assert_eq!(tools, vec!["dry_run", "launch_experiment"]);
        let (_, mut h) = host.effects.launched.take().unwrap();
        let _ = h.child.as_mut().unwrap().kill();
        let _ = h.child.as_mut().unwrap().wait();
    }
}
