mod common;

use std::fs;
use std::time::Duration;

use autolab_core::state::{is_valid_cycle_phases, ExitClass, Phase};
use autolab::engine::journal::{phases_by_cycle, read_journal};
use common::*;

fn secs(v: &[Duration]) -> Vec<u64> {
    v.iter().map(|d| d.as_secs()).collect()
}

#[test]
fn wait_cycles_back_off_and_log_one_decision_each() {
    let p = Project::new(|_| {});
    let fixture: String = (0..4).map(|_| leader_wait("nothing to do yet")).collect();
    let (mut e, log) = p.engine(&fixture);
    let s = e.run(4).unwrap();
    assert_eq!(s.cycles_completed, 4);
    assert_eq!(secs(&p.clock.sleeps()), vec![300, 600, 1200, 1800]);
    assert_eq!(e.state().burn_level, 4);
    assert_eq!(e.state().phase, Phase::Idle);
    assert_eq!(log.len(), 4);
    assert_eq!(e.memory().log().recent_decisions().len(), 4);
    let lines = read_journal(&e.layout().journal).unwrap();
    for (cycle, phases) in phases_by_cycle(&lines) {
        assert_eq!(phases, vec![Phase::Think, Phase::Cooldown], "cycle {cycle}");
    }
}

#[test]
fn dispatch_launch_monitor_reflect() {
    let p = Project::new(|c| c.monitor.poll_interval = 60);
    let fixture = [
        leader_dispatch("establish a baseline", "code_agent", "launch train.sh for 3 steps"),
        code_launch("\"--steps\", \"3\""),
        leader_reflect(Some("baseline acc 85.00 after 3 steps"), "next: tune the learning rate"),
    ]
    .concat();
    let (mut e, log) = p.engine(&fixture);
    e.run(1).unwrap();
    let st = e.state();
    assert_eq!(st.burn_level, 0);
    assert!(st.active_experiment.is_none() && st.pending.is_none());
    assert_eq!(st.next_experiment_id, 2);
    assert_eq!(st.dry_runs.planned, 1);
    // think, worker x2, reflect; monitoring adds nothing
    assert_eq!(log.len(), 4);
    assert_eq!(st.ledger.total_calls(), 4);
    let reflect = &log.requests()[3];
    let last = &reflect.messages.last().unwrap().content;
    assert!(last.contains("exp001"), "{last}");
    assert!(last.contains("acc=85"), "{last}");
    assert!(last.contains("training complete"));
    let kr: Vec<_> = e.memory().log().key_results().collect();
    assert_eq!(kr.len(), 1);
    assert!(kr[0].render_line().starts_with("[cycle 1 | 2026-04-07T"));
    let rec: autolab_core::state::ExperimentRecord =
        serde_json::from_str(&fs::read_to_string(p.ws().join("runs/exp001/record.json")).unwrap()).unwrap();
    assert_eq!(rec.exit_class, Some(ExitClass::ExitedOk));
    assert_eq!(rec.metrics.get("step"), Some(&3.0));
    let phases = &phases_by_cycle(&read_journal(&e.layout().journal).unwrap())[0].1;
    assert_eq!(phases, &vec![Phase::Think, Phase::Execute, Phase::Monitor, Phase::Reflect]);
    assert!(is_valid_cycle_phases(phases));
}

#[test]
fn dry_run_failure_is_caught_and_counts_as_output() {
    let p = Project::new(|_| {});
    let fixture = [
        leader_dispatch("try the augmentation branch", "code_agent", "launch it"),
        code_launch("\"--broken-import\""),
        leader_reflect(None, "fix the missing import first"),
    ]
    .concat();
    let (mut e, log) = p.engine(&fixture);
    e.run(1).unwrap();
    assert_eq!(e.state().dry_runs.caught, 1);
    assert_eq!(e.state().burn_level, 0);
    assert!(!p.ws().join("runs/exp001/train.log").exists());
    let reflect = log.requests().last().unwrap().messages.last().unwrap().content.clone();
    assert!(reflect.contains("dry_run=err"), "{reflect}");
    assert!(reflect.contains("No training run this cycle."));
}

#[test]
fn malformed_plan_twice_becomes_wait() {
    let p = Project::new(|_| {});
    let fixture = format!(
        "- system_contains: \"{LEADER}\"\n  reply: I think we should train more.\n- system_contains: \"{LEADER}\"\n  expect: \"could not be parsed\"\n  reply: still prose\n"
    );
    let (mut e, log) = p.engine(&fixture);
    e.run(1).unwrap();
    assert_eq!(log.len(), 2);
    let d: Vec<_> = e.memory().log().recent_decisions().collect();
    assert_eq!(d.len(), 1);
    assert!(d[0].text().starts_with("wait: plan unparseable"), "{}", d[0].text());
    assert_eq!(secs(&p.clock.sleeps()), vec![300]);
}

#[test]
fn directive_file_cuts_cooldown_short() {
    let p = Project::new(|_| {});
    let ws = p.ws();
    p.clock.schedule_in(Duration::from_secs(120), move || {
        fs::write(ws.join("HUMAN_DIRECTIVE.md"), "Switch to AdamW.\n").unwrap();
    });
    let fixture = [leader_wait("waiting for data"), leader_wait("ack")].concat();
    let (mut e, log) = p.engine(&fixture);
    e.run(2).unwrap();
    assert_eq!(secs(&p.clock.sleeps())[0], 120);
    let second = log.requests()[1].messages[0].content.clone();
    assert!(second.contains("Switch to AdamW."), "{second}");
    assert_eq!(e.state().directives_consumed, 1);
}

#[test]
fn cli_directive_reaches_first_think() {
    let p = Project::new(|_| {});
    let (mut e, log) = p.engine(&leader_wait("ok"));
    e.inject_cli_directive("focus on label smoothing").unwrap();
    e.run(1).unwrap();
    assert!(log.requests()[0].messages[0].content.contains("focus on label smoothing"));
}

#[test]
fn llm_failure_in_think_burns_and_continues() {
    let p = Project::new(|_| {});
    // the fixture has nothing for the second cycle
    let (mut e, _) = p.engine(&leader_wait("hold"));
    e.run(2).unwrap();
    assert_eq!(e.state().cycle, 2);
    assert_eq!(e.state().burn_level, 2);
    assert!(p.journal().contains("error in think"));
}

#[test]
fn restart_redoes_interrupted_think_without_new_cycle() {
    let p = Project::new(|_| {});
    {
        let (mut e, _) = p.engine(&leader_wait("first"));
        e.run(1).unwrap();
    }
    let state_path = p.ws().join("state.json");
    let mut st: serde_json::Value = serde_json::from_str(&fs::read_to_string(&state_path).unwrap()).unwrap();
    st["phase"] = "think".into();
    fs::write(&state_path, st.to_string()).unwrap();
    let (mut e, log) = p.engine(&leader_wait("again"));
    e.run(1).unwrap();
    assert_eq!(e.state().cycle, 1);
    assert_eq!(log.len(), 1);
}

#[test]
fn stop_and_zero_budget() {
    let p = Project::new(|_| {});
    let (mut e, log) = p.engine(&leader_wait("x"));
    assert_eq!(e.run(0).unwrap().cycles_completed, 0);
    p.hub.control.stop(false);
    let s = e.run(-1).unwrap();
    assert!(s.stopped);
    assert_eq!(log.len(), 0);
}

#[test]
fn second_daemon_is_locked_out() {
    let p = Project::new(|_| {});
    let (_e, _) = p.engine("[]");
    let mock = autolab::llm::MockBackend::from_yaml("[]").unwrap();
    let deps = autolab::engine::EngineDeps {
        clock: std::sync::Arc::new(p.clock.clone()),
        backend: Box::new(mock),
        papers: Box::new(autolab::agents::OfflineCorpus::bundled()),
        hub: p.hub.clone(),
    };
    let err = autolab::engine::Engine::open(p.cfg.clone(), p.base(), deps).err().unwrap();
    assert!(err.to_string().contains("lock"), "{err}");
}
