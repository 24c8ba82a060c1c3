//! Agents, their closed tool allowlists, tool schemas and chat messages.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgentKind {
    #[serde(rename = "leader")]
    Leader,
    #[serde(rename = "idea_agent")]
    Idea,
    #[serde(rename = "code_agent")]
    Code,
    #[serde(rename = "writing_agent")]
    Writing,
}

impl AgentKind {
    pub const ALL: [AgentKind; 4] = [AgentKind::Leader, AgentKind::Idea, AgentKind::Code, AgentKind::Writing];
    pub const WORKERS: [AgentKind; 3] = [AgentKind::Idea, AgentKind::Code, AgentKind::Writing];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::Leader => "leader",
            AgentKind::Idea => "idea_agent",
            AgentKind::Code => "code_agent",
            AgentKind::Writing => "writing_agent",
        }
    }

    pub fn is_worker(self) -> bool {
        self != AgentKind::Leader
    }

    /// The closed tool roster. Agent definition files cannot extend it.
    pub fn allowed_tools(self) -> &'static [ToolName] {
        use ToolName::*;
        match self {
            AgentKind::Leader => &[LogMemory, WriteFile, ReadFile],
            AgentKind::Idea => &[SearchPapers, GetPaper, WriteFile, ReadFile],
            AgentKind::Code => &[RunShell, LaunchExperiment, WriteFile, ReadFile, ListFiles],
            AgentKind::Writing => &[WriteFile, ReadFile, ListFiles],
        }
    }

    pub fn allows(self, tool: &str) -> bool {
        self.allowed_tools().iter().any(|t| t.as_str() == tool)
    }

    pub fn tool_schemas(self) -> Vec<ToolSchema> {
        self.allowed_tools().iter().map(|t| t.schema()).collect()
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown agent `{0}`")]
pub struct UnknownAgent(pub String);

impl FromStr for AgentKind {
    type Err = UnknownAgent;

    /// Accepts the roster names plus the short forms `idea`, `code`, `writing`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "leader" => Ok(AgentKind::Leader),
            "idea_agent" | "idea" => Ok(AgentKind::Idea),
            "code_agent" | "code" => Ok(AgentKind::Code),
            "writing_agent" | "writing" => Ok(AgentKind::Writing),
            other => Err(UnknownAgent(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ToolName {
    LogMemory,
    WriteFile,
    ReadFile,
    ListFiles,
    SearchPapers,
    GetPaper,
    RunShell,
    LaunchExperiment,
}

impl ToolName {
    pub const ALL: [ToolName; 8] = [
        ToolName::LogMemory,
        ToolName::WriteFile,
        ToolName::ReadFile,
        ToolName::ListFiles,
        ToolName::SearchPapers,
        ToolName::GetPaper,
        ToolName::RunShell,
        ToolName::LaunchExperiment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::LogMemory => "log_memory",
            ToolName::WriteFile => "write_file",
            ToolName::ReadFile => "read_file",
            ToolName::ListFiles => "list_files",
            ToolName::SearchPapers => "search_papers",
            ToolName::GetPaper => "get_paper",
            ToolName::RunShell => "run_shell",
            ToolName::LaunchExperiment => "launch_experiment",
        }
    }

    pub fn parse(s: &str) -> Option<ToolName> {
        ToolName::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn schema(self) -> ToolSchema {
        use ParamKind::*;
        let p = ToolParam::new;
        let (desc, params) = match self {
            ToolName::LogMemory => (
                "Append one line to the memory log. section is `decision` or `milestone`.",
                alloc::vec![
                    p("section", Str, true, "decision | milestone"),
                    p("text", Str, true, "single-line entry"),
                ],
            ),
            ToolName::WriteFile => (
                "Write a text file inside the workspace. Protected state files are refused.",
                alloc::vec![
                    p("path", Str, true, "workspace-relative path"),
                    p("content", Str, true, "full file content"),
                ],
            ),
            ToolName::ReadFile => (
                "Read a text file inside the workspace (output capped at 16 KB).",
                alloc::vec![p("path", Str, true, "workspace-relative path")],
            ),
            ToolName::ListFiles => (
                "List files under a workspace directory.",
                alloc::vec![p("path", Str, false, "directory, default `.`")],
            ),
            ToolName::SearchPapers => (
                "Search the paper index by keywords.",
                alloc::vec![
                    p("query", Str, true, "keywords"),
                    p("limit", Int, false, "max results, default 5"),
                ],
            ),
            ToolName::GetPaper => (
                "Fetch title and abstract of one paper by id.",
                alloc::vec![p("paper_id", Str, true, "id from search_papers")],
            ),
            ToolName::RunShell => (
                "Run a command in the workspace and return exit status and output tails.",
                alloc::vec![
                    p("command", StrList, true, "argv, e.g. [\"python\", \"lint.py\"]"),
                    p("timeout_secs", Int, false, "default from config"),
                ],
            ),
            ToolName::LaunchExperiment => (
                "Dry-run the training command, then launch it detached. Returns pid and log path.",
                alloc::vec![p("command", StrList, true, "training argv")],
            ),
        };
        ToolSchema {
            name: self.as_str().to_string(),
            description: desc.to_string(),
            parameters: params,
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Str,
    Int,
    StrList,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolParam {
    pub name: String,
    pub kind: ParamKind,
    pub required: bool,
    pub description: String,
}

impl ToolParam {
    fn new(name: &str, kind: ParamKind, required: bool, description: &str) -> Self {
        ToolParam {
            name: name.to_string(),
            kind,
            required,
            description: description.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ToolParam>,
}

impl ToolSchema {
    /// JSON-Schema object for the parameters.
    pub fn parameters_json(&self) -> Value {
        let mut props = Map::new();
        let mut required = Vec::new();
        for p in &self.parameters {
            let ty = match p.kind {
                ParamKind::Str => json!({"type": "string", "description": p.description}),
                ParamKind::Int => json!({"type": "integer", "description": p.description}),
                ParamKind::StrList => json!({
                    "type": "array",
                    "items": {"type": "string"},
                    "description": p.description
                }),
            };
            props.insert(p.name.clone(), ty);
            if p.required {
                required.push(Value::String(p.name.clone()));
            }
        }
        json!({"type": "object", "properties": props, "required": required})
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
    ToolResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub arguments: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tool_calls: Vec<ToolCall>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_id: Option<String>,
}

impl Message {
    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: Role::User,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>, tool_calls: Vec<ToolCall>) -> Self {
        Message {
            role: Role::Assistant,
            content: content.into(),
            tool_calls,
            tool_call_id: None,
        }
    }

    pub fn tool_result(call_id: impl Into<String>, content: impl Into<String>) -> Self {
        Message {
            role: Role::ToolResult,
            content: content.into(),
            tool_calls: Vec::new(),
            tool_call_id: Some(call_id.into()),
        }
    }
}
