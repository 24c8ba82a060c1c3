//! Core logic for the autolab experiment daemon.
//!
//! Everything here is pure computation over owned data: the two-tier bounded
//! memory, the token/cost model, agent tool rosters, plan parsing, cooldown
//! arithmetic and the durable loop-state types. IO, processes, clocks and
//! networking live in the `autolab` crate.

#![no_std]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod backoff;
pub mod config;
pub mod cost;
pub mod directive;
pub mod gpu;
pub mod memory;
pub mod plan;
pub mod roster;
pub mod state;
pub mod text;

pub use config::Config;
pub use cost::{CostLedger, LlmPhase, Pricing, Usage};
pub use memory::{LogEntry, MemoryLog, ProjectBrief};
pub use roster::{AgentKind, ToolName};
pub use state::{LoopState, Phase};
