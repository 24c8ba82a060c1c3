//! Experiment daemon: IO, subprocesses, LLM backends, the main loop and the
//! operator surfaces. Pure logic lives in `autolab-core`.

pub mod clock;
pub mod config_file;
pub mod fsutil;
pub mod memory_store;
pub mod llm;
pub mod executor;
pub mod procfs;
pub mod tail;
pub mod monitor;
pub mod directives;
pub mod agents;
pub mod control;
pub mod engine;
pub mod api;
