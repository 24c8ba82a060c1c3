#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use autolab::agents::OfflineCorpus;
use autolab::clock::SimClock;
use autolab::control::Hub;
use autolab::engine::{Engine, EngineDeps};
use autolab::llm::{MockBackend, RequestLog};
use autolab_core::config::Config;
use chrono::{TimeZone, Utc};

pub const STUB_TRAINER: &str = include_str!("../fixtures/stub_trainer.sh");
pub const LEADER: &str = "You run a deep-learning research project";
pub const CODE: &str = "You are the Code agent";

pub struct Project {
    pub dir: tempfile::TempDir,
    pub cfg: Config,
    pub clock: SimClock,
    pub hub: Arc<Hub>,
}

pub fn test_config() -> Config {
    let mut cfg = Config::default();
    cfg.project.name = "cifar-test".into();
    cfg.project.brief = "PROJECT_BRIEF.md".into();
    cfg.project.workspace = "ws".into();
    cfg.gpu.auto_detect = false;
    cfg.monitor.gpu_probe = Vec::new();
    cfg.experiment.dry_run_timeout = 30;
    cfg.experiment.shell_timeout = 30;
    cfg
}

impl Project {
    pub fn new(tweak: impl FnOnce(&mut Config)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = test_config();
        tweak(&mut cfg);
        let ws = dir.path().join(&cfg.project.workspace);
        fs::create_dir_all(&ws).unwrap();
        fs::write(
            ws.join(&cfg.project.brief),
            "# Brief\nGoal: raise CIFAR-100 top-1 above 80% with a ResNet-18.\nBudget: one GPU.\n",
        )
        .unwrap();
        fs::write(ws.join("train.sh"), STUB_TRAINER).unwrap();
        let clock = SimClock::new(Utc.with_ymd_and_hms(2026, 4, 7, 9, 0, 0).unwrap())
            .with_real_pause(Duration::from_millis(20));
        let hub = Arc::new(Hub::new(&cfg.project.name));
        Project { dir, cfg, clock, hub }
    }

    pub fn ws(&self) -> PathBuf {
        self.dir.path().join(&self.cfg.project.workspace)
    }

    pub fn base(&self) -> &Path {
        self.dir.path()
    }

    pub fn engine(&self, fixture: &str) -> (Engine, RequestLog) {
        let mock = MockBackend::from_yaml(fixture).expect("fixture parses");
        let log = mock.request_log();
        let deps = EngineDeps {
            clock: Arc::new(self.clock.clone()),
            backend: Box::new(mock),
            papers: Box::new(OfflineCorpus::bundled()),
            hub: self.hub.clone(),
        };
        let engine = Engine::open(self.cfg.clone(), self.base(), deps).expect("engine opens");
        (engine, log)
    }

    pub fn journal(&self) -> String {
        fs::read_to_string(self.ws().join("cycles.log")).unwrap_or_default()
    }
}

pub fn leader_wait(rationale: &str) -> String {
    format!("- system_contains: \"{LEADER}\"\n  expect: \"## Cycle\"\n  reply: |\n    action: wait\n    rationale: {rationale}\n")
}

pub fn leader_dispatch(rationale: &str, worker: &str, instruction: &str) -> String {
    format!(
        "- system_contains: \"{LEADER}\"\n  expect: \"## Cycle\"\n  reply: |\n    action: dispatch\n    rationale: {rationale}\n    task: {worker} | {instruction}\n"
    )
}

pub fn code_launch(args: &str) -> String {
    format!(
        "- system_contains: \"{CODE}\"\n  tool_calls:\n    - name: launch_experiment\n      arguments: {{command: [\"sh\", \"train.sh\", {args}]}}\n- system_contains: \"{CODE}\"\n  reply: launched the run\n"
    )
}

pub fn leader_reflect(milestone: Option<&str>, decision: &str) -> String {
    let mut s = format!("- system_contains: \"{LEADER}\"\n  expect: \"## Results of cycle\"\n  reply: |\n");
    if let Some(m) = milestone {
        s.push_str(&format!("    milestone: {m}\n"));
    }
    s.push_str(&format!("    decision: {decision}\n"));
    s
}
