//! Token usage, per-phase cost ledger, tool-schema overhead and the
//! measured-versus-polling cost report.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::roster::ToolSchema;

/// Reference estimator: every tool definition sent with a call costs this
/// many prompt tokens (name, description, parameter schema).
pub const TOKENS_PER_TOOL: u64 = 200;

pub fn overhead_tokens(tools: &[ToolSchema]) -> u64 {
    overhead_for_count(tools.len())
}

pub fn overhead_for_count(n: usize) -> u64 {
    TOKENS_PER_TOOL * n as u64
}

/// Fractional overhead saved by sending `small` tools instead of `large`.
pub fn overhead_reduction(small: usize, large: usize) -> f64 {
    if large == 0 {
        return 0.0;
    }
    1.0 - overhead_for_count(small) as f64 / overhead_for_count(large) as f64
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    /// Prompt tokens, cached ones included.
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub cached_input_tokens: u64,
    pub tool_overhead_tokens: u64,
}

impl Usage {
    pub fn total_tokens(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }

    pub fn accumulate(&mut self, other: &Usage) {
        self.input_tokens += other.input_tokens;
        self.output_tokens += other.output_tokens;
        self.cached_input_tokens += other.cached_input_tokens;
        self.tool_overhead_tokens += other.tool_overhead_tokens;
    }

    pub fn is_zero(&self) -> bool {
        *self == Usage::default()
    }
}

/// Dollar prices per thousand tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pricing {
    pub usd_per_1k_input: f64,
    pub usd_per_1k_output: f64,
    pub usd_per_1k_cached_input: f64,
}

impl Default for Pricing {
    /// $3 / $15 / $0.30 per million input / output / cached-input tokens.
    fn default() -> Self {
        Pricing {
            usd_per_1k_input: 0.003,
            usd_per_1k_output: 0.015,
            usd_per_1k_cached_input: 0.0003,
        }
    }
}

impl Pricing {
    pub fn cost(&self, u: &Usage) -> f64 {
        let cached = u.cached_input_tokens.min(u.input_tokens);
        let fresh = u.input_tokens - cached;
        (fresh as f64 * self.usd_per_1k_input
            + cached as f64 * self.usd_per_1k_cached_input
            + u.output_tokens as f64 * self.usd_per_1k_output)
            / 1000.0
    }

    /// Cost of prompt-only tokens, used for the analytic polling model.
    pub fn input_cost(&self, tokens: u64) -> f64 {
        tokens as f64 * self.usd_per_1k_input / 1000.0
    }
}

/// Phases that may call the LLM. Monitoring deliberately has no variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmPhase {
    Think,
    Execute,
    Reflect,
}

/// Rows of the ledger, monitor included (always zero).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LedgerPhase {
    Think,
    Execute,
    Monitor,
    Reflect,
}

impl LedgerPhase {
    pub const ALL: [LedgerPhase; 4] = [
        LedgerPhase::Think,
        LedgerPhase::Execute,
        LedgerPhase::Monitor,
        LedgerPhase::Reflect,
    ];

    pub fn label(self) -> &'static str {
        match self {
            LedgerPhase::Think => "think",
            LedgerPhase::Execute => "execute",
            LedgerPhase::Monitor => "monitor",
            LedgerPhase::Reflect => "reflect",
        }
    }
}

impl From<LlmPhase> for LedgerPhase {
    fn from(p: LlmPhase) -> Self {
        match p {
            LlmPhase::Think => LedgerPhase::Think,
            LlmPhase::Execute => LedgerPhase::Execute,
            LlmPhase::Reflect => LedgerPhase::Reflect,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseCost {
    pub calls: u64,
    pub usage: Usage,
    pub usd: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LedgerError {
    #[error("monitor phase recorded {0} LLM calls; monitoring must never call the LLM")]
    MonitorNotZero(u64),
    #[error("stored cost for {phase} is {stored}, recomputed {recomputed}")]
    UsdMismatch {
        phase: &'static str,
        stored: f64,
        recomputed: f64,
    },
    #[error("cached input tokens exceed input tokens in {0}")]
    CachedExceedsInput(&'static str),
}

/// Cumulative per-phase accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub pricing: Pricing,
    think: PhaseCost,
    execute: PhaseCost,
    monitor: PhaseCost,
    reflect: PhaseCost,
}

impl Default for CostLedger {
    fn default() -> Self {
        CostLedger::new(Pricing::default())
    }
}

impl CostLedger {
    pub fn new(pricing: Pricing) -> Self {
        CostLedger {
            pricing,
            think: PhaseCost::default(),
            execute: PhaseCost::default(),
            monitor: PhaseCost::default(),
            reflect: PhaseCost::default(),
        }
    }

    /// Record one completed call. Stored dollars are always recomputed from
    /// the cumulative usage, never summed call by call.
    pub fn record(&mut self, phase: LlmPhase, usage: &Usage) {
        let pricing = self.pricing;
        let row = match phase {
            LlmPhase::Think => &mut self.think,
            LlmPhase::Execute => &mut self.execute,
            LlmPhase::Reflect => &mut self.reflect,
        };
        row.calls += 1;
        row.usage.accumulate(usage);
        row.usd = pricing.cost(&row.usage);
    }

    pub fn phase(&self, phase: LedgerPhase) -> &PhaseCost {
        match phase {
            LedgerPhase::Think => &self.think,
            LedgerPhase::Execute => &self.execute,
            LedgerPhase::Monitor => &self.monitor,
            LedgerPhase::Reflect => &self.reflect,
        }
    }

    pub fn total(&self) -> PhaseCost {
        let mut t = PhaseCost::default();
        for p in LedgerPhase::ALL {
            let row = self.phase(p);
            t.calls += row.calls;
            t.usage.accumulate(&row.usage);
            t.usd += row.usd;
        }
        t
    }

    pub fn total_calls(&self) -> u64 {
        self.total().calls
    }

    /// Check the ledger's invariants; used after loading persisted state.
    pub fn verify(&self) -> Result<(), LedgerError> {
        if self.monitor.calls != 0 || !self.monitor.usage.is_zero() {
            return Err(LedgerError::MonitorNotZero(self.monitor.calls));
        }
        for p in LedgerPhase::ALL {
            let row = self.phase(p);
            if row.usage.cached_input_tokens > row.usage.input_tokens {
                return Err(LedgerError::CachedExceedsInput(p.label()));
            }
            let recomputed = self.pricing.cost(&row.usage);
            // tolerate the last-digit drift of a decimal round trip
            if (recomputed - row.usd).abs() > 1e-9 * recomputed.abs().max(1e-6) {
                return Err(LedgerError::UsdMismatch {
                    phase: p.label(),
                    stored: row.usd,
                    recomputed,
                });
            }
        }
        Ok(())
    }
}

/// Counterfactual conventional agent that asks the LLM for progress on a
/// fixed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostScenario {
    pub training_hours: f64,
    pub llm_poll_interval_minutes: f64,
    pub tokens_per_poll_call: u64,
    pub idle_hours: f64,
    pub idle_poll_interval_minutes: f64,
    /// Calls and tokens of the conventional agent's own planning work.
    pub active_calls: u64,
    pub active_tokens: u64,
}

impl Default for CostScenario {
    fn default() -> Self {
        CostScenario {
            training_hours: 8.0,
            llm_poll_interval_minutes: 5.0,
            tokens_per_poll_call: 2000,
            idle_hours: 15.0,
            idle_poll_interval_minutes: 5.0,
            active_calls: 15,
            active_tokens: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

impl CostScenario {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("training_hours", self.training_hours),
            ("idle_hours", self.idle_hours),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ScenarioError::InvalidScenario(format!("{name} must be >= 0")));
            }
        }
        for (name, v) in [
            ("llm_poll_interval_minutes", self.llm_poll_interval_minutes),
            ("idle_poll_interval_minutes", self.idle_poll_interval_minutes),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ScenarioError::InvalidScenario(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }

    /// Whole polls that fit in `hours` at `interval_minutes`.
    pub fn polls(hours: f64, interval_minutes: f64) -> u64 {
        let exact = hours * 60.0 / interval_minutes;
        // guard 7.9999999 style float error
        (exact + 1e-9).floor() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub label: String,
    pub calls: u64,
    pub tokens: u64,
    pub usd: f64,
}

impl CostRow {
    fn new(label: &str, calls: u64, tokens: u64, usd: f64) -> Self {
        CostRow {
            label: label.to_string(),
            calls,
            tokens,
            usd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTable {
    /// think, execute, monitor, reflect, total; empty without a ledger.
    pub measured: Vec<CostRow>,
    /// active, monitor, idle poll, total.
    pub conventional: Vec<CostRow>,
    /// conventional / measured, by tokens.
    pub token_ratio: Option<f64>,
    /// conventional / measured, by dollars.
    pub usd_ratio: Option<f64>,
}

impl CostTable {
    pub fn conventional_total(&self) -> &CostRow {
        self.conventional.last().expect("total row")
    }

    pub fn conventional_row(&self, label: &str) -> Option<&CostRow> {
        self.conventional.iter().find(|r| r.label == label)
    }

    pub fn measured_row(&self, label: &str) -> Option<&CostRow> {
        self.measured.iter().find(|r| r.label == label)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let header = format!("{:<20} {:>8} {:>12} {:>10}\n", "phase", "calls", "tokens", "usd");
        if !self.measured.is_empty() {
            out.push_str("measured (this daemon)\n");
            out.push_str(&header);
            for r in &self.measured {
                let _ = writeln!(out, "{:<20} {:>8} {:>12} {:>10.4}", r.label, r.calls, r.tokens, r.usd);
            }
            out.push('\n');
        }
        out.push_str("conventional polling agent (analytic)\n");
        out.push_str(&header);
        for r in &self.conventional {
            let _ = writeln!(out, "{:<20} {:>8} {:>12} {:>10.4}", r.label, r.calls, r.tokens, r.usd);
        }
        if let (Some(t), Some(u)) = (self.token_ratio, self.usd_ratio) {
            let _ = writeln!(out, "\nreduction: {t:.1}x by tokens, {u:.1}x by cost");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,phase,calls,tokens,usd\n");
        for r in &self.measured {
            let _ = writeln!(out, "measured,{},{},{},{:.6}", r.label, r.calls, r.tokens, r.usd);
        }
        for r in &self.conventional {
            let _ = writeln!(out, "conventional,{},{},{},{:.6}", r.label, r.calls, r.tokens, r.usd);
        }
        if let (Some(t), Some(u)) = (self.token_ratio, self.usd_ratio) {
            let _ = writeln!(out, "ratio,token_ratio,,,{t:.6}");
            let _ = writeln!(out, "ratio,usd_ratio,,,{u:.6}");
        }
        out
    }
}

/// Measured rows from `ledger` (when given) next to the analytic cost of a
/// conventional polling agent. Polling calls are priced as prompt tokens.
pub fn cost_report(
    ledger: Option<&CostLedger>,
    scenario: &CostScenario,
    pricing: &Pricing,
) -> Result<CostTable, ScenarioError> {
    scenario.validate()?;

    let monitor_calls = CostScenario::polls(scenario.training_hours, scenario.llm_poll_interval_minutes);
    let idle_calls = CostScenario::polls(scenario.idle_hours, scenario.idle_poll_interval_minutes);
    let monitor_tokens = monitor_calls * scenario.tokens_per_poll_call;
    let idle_tokens = idle_calls * scenario.tokens_per_poll_call;
    let active = CostRow::new(
        "active",
        scenario.active_calls,
        scenario.active_tokens,
        pricing.input_cost(scenario.active_tokens),
    );
    let monitor = CostRow::new("monitor", monitor_calls, monitor_tokens, pricing.input_cost(monitor_tokens));
    let idle = CostRow::new("idle_poll", idle_calls, idle_tokens, pricing.input_cost(idle_tokens));
    let total = CostRow::new(
        "total",
        active.calls + monitor.calls + idle.calls,
        active.tokens + monitor.tokens + idle.tokens,
        active.usd + monitor.usd + idle.usd,
    );

    let mut measured = Vec::new();
    let mut token_ratio = None;
    let mut usd_ratio = None;
    if let Some(ledger) = ledger {
        for p in LedgerPhase::ALL {
            let row = ledger.phase(p);
            measured.push(CostRow::new(p.label(), row.calls, row.usage.total_tokens(), row.usd));
        }
        let t = ledger.total();
        measured.push(CostRow::new("total", t.calls, t.usage.total_tokens(), t.usd));
        if t.usage.total_tokens() > 0 {
            token_ratio = Some(total.tokens as f64 / t.usage.total_tokens() as f64);
        }
        if t.usd > 0.0 {
            usd_ratio = Some(total.usd / t.usd);
        }
    }

    Ok(CostTable {
        measured,
        conventional: vec![active, monitor, idle, total],
        token_ratio,
        usd_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overhead_model() {
        assert_eq!(overhead_for_count(0), 0);
        assert_eq!(overhead_for_count(4), 800);
        assert_eq!(overhead_for_count(15), 3000);
        let r = overhead_reduction(4, 15);
        assert!((r - 0.7333333).abs() < 1e-6);
        assert_eq!(libm_round(r * 100.0), 73.0);
    }

    fn libm_round(x: f64) -> f64 {
        (x + 0.5) as i64 as f64
    }

    #[test]
    fn ledger_recomputes_dollars_from_usage() {
        let mut l = CostLedger::default();
        l.record(LlmPhase::Think, &Usage {
            input_tokens: 3500,
            output_tokens: 250,
            cached_input_tokens: 1000,
            tool_overhead_tokens: 600,
        });
        l.record(LlmPhase::Think, &Usage {
            input_tokens: 3500,
            output_tokens: 250,
            ..Usage::default()
        });
        let think = l.phase(LedgerPhase::Think);
        assert_eq!(think.calls, 2);
        assert_eq!(think.usage.input_tokens, 7000);
        assert_eq!(think.usd, l.pricing.cost(&think.usage));
        l.verify().unwrap();
        assert_eq!(l.phase(LedgerPhase::Monitor), &PhaseCost::default());
    }

    #[test]
    fn tampered_ledger_fails_verification() {
        let mut l = CostLedger::default();
        l.record(LlmPhase::Reflect, &Usage {
            input_tokens: 10,
            ..Usage::default()
        });
        l.monitor.calls = 1;
        assert_eq!(l.verify(), Err(LedgerError::MonitorNotZero(1)));
    }

    #[test]
    fn polling_arithmetic() {
        let t = cost_report(None, &CostScenario::default(), &Pricing::default()).unwrap();
        let m = t.conventional_row("monitor").unwrap();
        assert_eq!((m.calls, m.tokens), (96, 192_000));
        let idle = t.conventional_row("idle_poll").unwrap();
        assert_eq!((idle.calls, idle.tokens), (180, 360_000));
        let total = t.conventional_total();
        assert_eq!((total.calls, total.tokens), (291, 602_000));
        assert!(t.measured.is_empty());
        assert!(t.token_ratio.is_none());
    }

    #[test]
    fn zero_hour_training_has_no_monitor_cost() {
        let s = CostScenario {
            training_hours: 0.0,
            idle_hours: 0.0,
            active_calls: 0,
            active_tokens: 0,
            ..CostScenario::default()
        };
        let t = cost_report(None, &s, &Pricing::default()).unwrap();
        for r in &t.conventional {
            assert_eq!((r.calls, r.tokens, r.usd), (0, 0, 0.0), "{}", r.label);
        }
    }

    #[test]
    fn invalid_scenarios() {
        let s = CostScenario {
            llm_poll_interval_minutes: 0.0,
            ..CostScenario::default()
        };
        assert!(cost_report(None, &s, &Pricing::default()).is_err());
        let s = CostScenario {
            training_hours: -1.0,
            ..CostScenario::default()
        };
        assert!(cost_report(None, &s, &Pricing::default()).is_err());
    }

    #[test]
    fn renders_table_and_csv() {
        let mut l = CostLedger::default();
        l.record(LlmPhase::Execute, &Usage {
            input_tokens: 20_000,
            output_tokens: 1_000,
            ..Usage::default()
        });
        let t = cost_report(Some(&l), &CostScenario::default(), &Pricing::default()).unwrap();
        let table = t.to_table();
        assert!(table.contains("monitor"));
        assert!(table.contains("reduction"));
        let csv = t.to_csv();
        assert!(csv.starts_with("section,phase,calls,tokens,usd\n"));
        assert!(csv.contains("conventional,total,291,602000,"));
        assert!(csv.contains("measured,monitor,0,0,0.000000"));
    }
}
