//! Project configuration: typed sections, defaults and validation.
//!
//! Parsing the YAML document happens in the std crate; this module owns the
//! shape, the defaults and every invariant check.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::cost::Pricing;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    pub fn key(&self) -> &str {
        match self {
            ConfigError::Validation { key, .. } => key,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub project: ProjectSection,
    pub agent: AgentSection,
    pub memory: MemorySection,
    pub gpu: GpuSection,
    pub monitor: MonitorSection,
    pub experiment: ExperimentSection,
    pub pricing: Pricing,
    pub api: ApiSection,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ProjectSection {
    pub name: String,
    pub brief: String,
    pub workspace: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentSection {
    pub model: String,
    /// -1 means unlimited.
    pub max_cycles: i64,
    /// Worker dispatches per cycle.
    pub max_steps_per_cycle: u32,
    /// Seconds.
    pub cooldown_interval: u64,
    /// LLM/tool rounds allowed inside one agent step.
    pub max_tool_rounds: u32,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            model: "claude-sonnet-4-6".to_string(),
            max_cycles: -1,
            max_steps_per_cycle: 3,
            cooldown_interval: 300,
            max_tool_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MemorySection {
    pub brief_max_chars: usize,
    pub log_max_chars: usize,
    pub milestone_max_chars: usize,
    pub max_recent_entries: usize,
}

impl Default for MemorySection {
    fn default() -> Self {
        MemorySection {
            brief_max_chars: 3000,
            log_max_chars: 2000,
            milestone_max_chars: 1200,
            max_recent_entries: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GpuSection {
    pub auto_detect: bool,
    /// Last GPU is kept out of scheduling.
    pub reserve_last: bool,
}

impl Default for GpuSection {
    fn default() -> Self {
        GpuSection {
            auto_detect: true,
            reserve_last: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricPatternSpec {
    pub name: String,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorSection {
    /// Seconds between polls.
    pub poll_interval: u64,
    pub zero_llm: bool,
    /// Extra metric regexes, each with one numeric capture group.
    pub metric_patterns: Vec<MetricPatternSpec>,
    /// GPU probe argv; empty disables the probe.
    pub gpu_probe: Vec<String>,
}

impl Default for MonitorSection {
    fn default() -> Self {
        MonitorSection {
            poll_interval: 900,
            zero_llm: true,
            metric_patterns: Vec::new(),
            gpu_probe: default_gpu_probe(),
        }
    }
}

pub fn default_gpu_probe() -> Vec<String> {
    vec![
        "nvidia-smi".to_string(),
        "--query-gpu=index,utilization.gpu,memory.used".to_string(),
        "--format=csv,noheader".to_string(),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSection {
    pub mandatory_dry_run: bool,
    pub max_parallel: u32,
    /// Seconds.
    pub dry_run_timeout: u64,
    /// Seconds; default timeout for the run_shell tool.
    pub shell_timeout: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            mandatory_dry_run: true,
            max_parallel: 1,
            dry_run_timeout: 600,
            shell_timeout: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ApiSection {
    pub enabled: bool,
    pub bind: String,
}

impl Default for ApiSection {
    fn default() -> Self {
        ApiSection {
            enabled: true,
            bind: "127.0.0.1:7878".to_string(),
        }
    }
}

/// Every key the loader understands, as dotted paths. Anything else in the
/// document is reported as unknown (warned, not rejected).
pub const KNOWN_KEYS: &[&str] = &[
    "project.name",
    "project.brief",
    "project.workspace",
    "agent.model",
    "agent.max_cycles",
    "agent.max_steps_per_cycle",
    "agent.cooldown_interval",
    "agent.max_tool_rounds",
    "memory.brief_max_chars",
    "memory.log_max_chars",
    "memory.milestone_max_chars",
    "memory.max_recent_entries",
    "gpu.auto_detect",
    "gpu.reserve_last",
    "monitor.poll_interval",
    "monitor.zero_llm",
    "monitor.metric_patterns",
    "monitor.gpu_probe",
    "experiment.mandatory_dry_run",
    "experiment.max_parallel",
    "experiment.dry_run_timeout",
    "experiment.shell_timeout",
    "pricing.usd_per_1k_input",
    "pricing.usd_per_1k_output",
    "pricing.usd_per_1k_cached_input",
    "api.enabled",
    "api.bind",
];

/// True if `dotted` is a known key or a section holding known keys.
pub fn is_known_key(dotted: &str) -> bool {
    KNOWN_KEYS.iter().any(|k| {
        *k == dotted || (k.starts_with(dotted) && k.as_bytes().get(dotted.len()) == Some(&b'.'))
    })
}

impl Config {
    /// Check every invariant; the error names the offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, value) in [
            ("project.name", &self.project.name),
            ("project.brief", &self.project.brief),
            ("project.workspace", &self.project.workspace),
        ] {
            if value.trim().is_empty() {
                return Err(ConfigError::invalid(key, "required field is missing"));
            }
        }
        if self.agent.model.trim().is_empty() {
            return Err(ConfigError::invalid("agent.model", "must not be empty"));
        }
        if self.agent.max_cycles < -1 {
            return Err(ConfigError::invalid(
                "agent.max_cycles",
                "must be -1 (unlimited) or a non-negative count",
            ));
        }
        if self.agent.max_steps_per_cycle < 1 {
            return Err(ConfigError::invalid("agent.max_steps_per_cycle", "must be >= 1"));
        }
        if self.agent.cooldown_interval < 1 {
            return Err(ConfigError::invalid("agent.cooldown_interval", "must be >= 1 second"));
        }
        if self.agent.max_tool_rounds < 1 {
            return Err(ConfigError::invalid("agent.max_tool_rounds", "must be >= 1"));
        }

        let m = &self.memory;
        for (key, value) in [
            ("memory.brief_max_chars", m.brief_max_chars),
            ("memory.log_max_chars", m.log_max_chars),
            ("memory.milestone_max_chars", m.milestone_max_chars),
            ("memory.max_recent_entries", m.max_recent_entries),
        ] {
            if value == 0 {
                return Err(ConfigError::invalid(key, "must be > 0"));
            }
        }
        let min_milestone = crate::memory::KEY_RESULTS_HEADER.len() + crate::memory::MIN_ENTRY_BUDGET;
        if m.milestone_max_chars < min_milestone {
            return Err(ConfigError::invalid(
                "memory.milestone_max_chars",
                format!("must be >= {min_milestone}"),
            ));
        }
        let min_log = m.milestone_max_chars
            + crate::memory::DECISIONS_HEADER.len()
            + crate::memory::MIN_ENTRY_BUDGET;
        if m.log_max_chars < min_log {
            return Err(ConfigError::invalid(
                "memory.log_max_chars",
                format!("must be >= milestone_max_chars + {} (= {min_log})", min_log - m.milestone_max_chars),
            ));
        }

        if self.monitor.poll_interval < 1 {
            return Err(ConfigError::invalid("monitor.poll_interval", "must be >= 1 second"));
        }
        for p in &self.monitor.metric_patterns {
            if p.name.trim().is_empty() || p.pattern.is_empty() {
                return Err(ConfigError::invalid(
                    "monitor.metric_patterns",
                    "every pattern needs a name and a regex",
                ));
            }
        }
        if self.experiment.max_parallel != 1 {
            return Err(ConfigError::invalid(
                "experiment.max_parallel",
                format!(
                    "only 1 is supported (got {}); experiments and LLM work run strictly one at a time",
                    self.experiment.max_parallel
                ),
            ));
        }
        if self.experiment.dry_run_timeout < 1 {
            return Err(ConfigError::invalid("experiment.dry_run_timeout", "must be >= 1 second"));
        }
        if self.experiment.shell_timeout < 1 {
            return Err(ConfigError::invalid("experiment.shell_timeout", "must be >= 1 second"));
        }
        for (key, v) in [
            ("pricing.usd_per_1k_input", self.pricing.usd_per_1k_input),
            ("pricing.usd_per_1k_output", self.pricing.usd_per_1k_output),
            ("pricing.usd_per_1k_cached_input", self.pricing.usd_per_1k_cached_input),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::invalid(key, "must be a finite, non-negative price"));
            }
        }
        if self.api.bind.trim().is_empty() {
            return Err(ConfigError::invalid("api.bind", "must not be empty"));
        }
        Ok(())
    }

    pub fn memory_caps(&self) -> crate::memory::LogCaps {
        crate::memory::LogCaps {
            log_max_chars: self.memory.log_max_chars,
            milestone_max_chars: self.memory.milestone_max_chars,
            max_recent_entries: self.memory.max_recent_entries,
        }
    }

    /// Model name for an agent whose definition says `inherit`.
    pub fn resolve_model<'a>(&'a self, declared: &'a str) -> &'a str {
        if declared == "inherit" {
            &self.agent.model
        } else {
            declared
        }
    }
}

/// GPU indices available for scheduling.
///
/// `detected` must be sorted ascending. With `reserve_last` and at least two
/// GPUs the last one is withheld; a single GPU is never withheld (a warning
/// is logged instead).
pub fn effective_gpu_set(cfg: &Config, detected: &[u32]) -> Vec<u32> {
    if !cfg.gpu.reserve_last {
        return detected.to_vec();
    }
    match detected.len() {
        0 => Vec::new(),
        1 => {
            log::warn!(
                "gpu.reserve_last is set but only one GPU ({}) was detected; not reserving it",
                detected[0]
            );
            detected.to_vec()
        }
        n => detected[..n - 1].to_vec(),
    }
}
