//! Leader and worker agents: definitions, tools, conversations, dispatch.

pub mod definition;
pub mod papers;
pub mod step;
pub mod tools;

pub use definition::{load_agent_definition, parse_definition, AgentDefinition, AgentSet, DefinitionError};
pub use papers::{OfflineCorpus, PaperMeta, PaperSearch};
pub use step::{dispatch_worker, run_agent_step, AgentError, Conversation, CycleContext, StepParams, WorkerTask};
pub use tools::{CycleEffects, ToolHost, ToolResult, TraceEntry};
