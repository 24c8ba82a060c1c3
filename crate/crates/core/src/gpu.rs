//! Parsing GPU probe output and detecting silent stalls.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpuSample {
    pub index: u32,
    pub utilization_pct: f64,
    pub memory_used_mb: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse GPU probe line `{line}`: {reason}")]
pub struct GpuParseError {
    pub line: String,
    pub reason: &'static str,
}

fn number(field: &str) -> Option<f64> {
    let f = field.trim();
    let end = f
        .char_indices()
        .find(|(_, c)| !(c.is_ascii_digit() || *c == '.' || *c == '-'))
        .map(|(i, _)| i)
        .unwrap_or(f.len());
    let v: f64 = f[..end].parse().ok()?;
    v.is_finite().then_some(v)
}

/// Parse `index, utilization, memory.used` CSV as printed by the vendor SMI
/// tool, with or without units (`0, 97 %, 81000 MiB` or `0, 97, 81000`).
/// A header line is skipped.
pub fn parse_smi_csv(text: &str) -> Result<Vec<GpuSample>, GpuParseError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let l = line.trim();
        if l.is_empty() || l.starts_with("index") {
            continue;
        }
        let fields: Vec<&str> = l.split(',').collect();
        if fields.len() < 3 {
            return Err(GpuParseError {
                line: l.to_string(),
                reason: "expected 3 comma-separated fields",
            });
        }
        let err = |reason| GpuParseError {
            line: l.to_string(),
            reason,
        };
        let index = fields[0].trim().parse::<u32>().map_err(|_| err("bad index"))?;
        let utilization_pct = number(fields[1]).ok_or_else(|| err("bad utilization"))?;
        let memory_used_mb = number(fields[2]).ok_or_else(|| err("bad memory"))?;
        out.push(GpuSample {
            index,
            utilization_pct,
            memory_used_mb,
        });
    }
    Ok(out)
}

/// Raises a flag once a live process has shown all-zero GPU utilization for
/// `threshold` consecutive polls. Polls without probe data break the streak.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StallDetector {
    threshold: u32,
    idle_streak: u32,
}

impl Default for StallDetector {
    fn default() -> Self {
        StallDetector::new(3)
    }
}

impl StallDetector {
    pub fn new(threshold: u32) -> Self {
        StallDetector {
            threshold,
            idle_streak: 0,
        }
    }

    pub fn observe(&mut self, alive: bool, samples: Option<&[GpuSample]>) -> bool {
        match samples {
            Some(s) if alive && !s.is_empty() && s.iter().all(|g| g.utilization_pct == 0.0) => {
                self.idle_streak += 1;
            }
            _ => self.idle_streak = 0,
        }
        self.stalled()
    }

    pub fn stalled(&self) -> bool {
        self.idle_streak >= self.threshold
    }
}
