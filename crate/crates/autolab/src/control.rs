//! What the loop thread shares with operator surfaces: control flags,
//! a status snapshot and an event stream. Readers only ever see copies.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Mutex;

use autolab_core::cost::{CostLedger, LedgerPhase};
use autolab_core::state::Phase;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default)]
pub struct Control {
    paused: AtomicBool,
    stop: AtomicBool,
    kill_active: AtomicBool,
}

impl Control {
    pub fn pause(&self) {
        self.paused.store(true, Ordering::SeqCst);
    }

    pub fn resume(&self) {
        self.paused.store(false, Ordering::SeqCst);
    }

    /// Ask the loop to stop at the next safe point. With `kill_active` a
    /// running experiment is killed too; otherwise it keeps running.
    pub fn stop(&self, kill_active: bool) {
        if kill_active {
            self.kill_active.store(true, Ordering::SeqCst);
        }
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_paused(&self) -> bool {
        self.paused.load(Ordering::SeqCst)
    }

    pub fn stop_requested(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }

    pub fn kill_active_requested(&self) -> bool {
        self.kill_active.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSummary {
    pub id: u32,
    pub pid: Option<u32>,
    pub alive: bool,
    pub log_path: String,
    pub polls: u64,
    pub stalled: bool,
    pub latest_metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySizes {
    pub brief_chars: usize,
    pub brief_cap: usize,
    pub log_chars: usize,
    pub log_cap: usize,
    pub key_results_chars: usize,
    pub key_results_cap: usize,
    pub decisions: usize,
    pub decisions_cap: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTotals {
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached_input_tokens: u64,
    pub usd: f64,
}

pub fn ledger_totals(ledger: &CostLedger) -> BTreeMap<String, PhaseTotals> {
    LedgerPhase::ALL
        .iter()
        .map(|p| {
            let row = ledger.phase(*p);
            (
                p.label().to_string(),
                PhaseTotals {
                    calls: row.calls,
                    input_tokens: row.usage.input_tokens,
                    output_tokens: row.usage.output_tokens,
                    cached_input_tokens: row.usage.cached_input_tokens,
                    usd: row.usd,
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub project: String,
    pub cycle: u64,
    pub phase: Phase,
    pub phase_since: Option<DateTime<Utc>>,
    pub paused: bool,
    pub burn_level: u32,
    /// Seconds the next cooldown would last at the current burn level.
    pub next_cooldown_secs: u64,
    pub active_experiment: Option<ActiveSummary>,
    pub memory: MemorySizes,
    pub ledger: BTreeMap<String, PhaseTotals>,
    pub llm_calls: u64,
    pub directive_pending: bool,
    pub directives_consumed: u64,
    pub recent_cycles: Vec<String>,
}

impl StatusSnapshot {
    pub fn empty(project: &str) -> Self {
        StatusSnapshot {
            project: project.to_string(),
            cycle: 0,
            phase: Phase::Idle,
            phase_since: None,
            paused: false,
            burn_level: 0,
            next_cooldown_secs: 0,
            active_experiment: None,
            memory: MemorySizes::default(),
            ledger: ledger_totals(&CostLedger::default()),
            llm_calls: 0,
            directive_pending: false,
            directives_consumed: 0,
            recent_cycles: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryView {
    pub brief: String,
    pub log: String,
    pub render_chars: usize,
    pub sizes: MemorySizes,
}

#[derive(Debug, Clone)]
pub struct Shared {
    pub status: StatusSnapshot,
    pub memory: MemoryView,
    pub ledger: CostLedger,
}

/// One line on the event stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Phase {
        at: DateTime<Utc>,
        cycle: u64,
        phase: Phase,
        summary: String,
    },
    Monitor {
        at: DateTime<Utc>,
        cycle: u64,
        poll: u64,
        alive: bool,
        gpu_active: Option<bool>,
        stalled: bool,
        latest_metrics: BTreeMap<String, f64>,
    },
    Control {
        at: DateTime<Utc>,
        action: String,
    },
}

pub struct Hub {
    pub control: Control,
    shared: Mutex<Shared>,
    subscribers: Mutex<Vec<Sender<String>>>,
}

impl Hub {
    pub fn new(project: &str) -> Self {
        Hub {
            control: Control::default(),
            shared: Mutex::new(Shared {
                status: StatusSnapshot::empty(project),
                memory: MemoryView::default(),
                ledger: CostLedger::default(),
            }),
            subscribers: Mutex::new(Vec::new()),
        }
    }

    pub fn snapshot(&self) -> Shared {
        self.shared.lock().expect("hub lock").clone()
    }

    pub fn update(&self, f: impl FnOnce(&mut Shared)) {
        f(&mut self.shared.lock().expect("hub lock"));
    }

    pub fn subscribe(&self) -> Receiver<String> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("hub lock").push(tx);
        rx
    }

    /// Send to every live subscriber; closed ones are dropped.
    pub fn publish(&self, e: &Event) {
        let line = serde_json::to_string(e).expect("event serializes");
        self.subscribers
            .lock()
            .expect("hub lock")
            .retain(|tx| tx.send(line.clone()).is_ok());
    }
}
