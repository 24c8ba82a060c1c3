//! Agent definition files: YAML frontmatter (`name`, `description`,
//! `model`) followed by the system prompt.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use autolab_core::roster::{AgentKind, ToolName, ToolSchema};
use autolab_core::text::estimate_tokens;
use serde::Deserialize;

pub const PROMPT_TOKEN_BUDGET: u64 = 500;
pub const INHERIT: &str = "inherit";

const BUILTIN: [(AgentKind, &str); 4] = [
    (AgentKind::Leader, include_str!("../../assets/agents/leader.md")),
    (AgentKind::Idea, include_str!("../../assets/agents/idea_agent.md")),
    (AgentKind::Code, include_str!("../../assets/agents/code_agent.md")),
    (AgentKind::Writing, include_str!("../../assets/agents/writing_agent.md")),
];

#[derive(Debug, thiserror::Error)]
pub enum DefinitionError {
    #[error("{origin}: malformed frontmatter: {reason}")]
    MalformedFrontmatter { origin: String, reason: String },
    #[error("{origin}: unknown agent name `{name}`")]
    UnknownAgentName { origin: String, name: String },
    #[error("{0}: {1}")]
    Io(PathBuf, #[source] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentDefinition {
    pub kind: AgentKind,
    pub name: String,
    pub description: String,
    /// As declared; may be `inherit`.
    pub model: String,
    pub system_prompt: String,
    /// Always the built-in roster for `kind`.
    pub allowed_tools: Vec<ToolName>,
}

#[derive(Deserialize)]
struct Frontmatter {
    name: Option<String>,
    #[serde(default)]
    description: String,
    #[serde(default)]
    model: Option<String>,
}

impl AgentDefinition {
    pub fn tool_schemas(&self) -> Vec<ToolSchema> {
        self.allowed_tools.iter().map(|t| t.schema()).collect()
    }

    pub fn allows(&self, tool: &str) -> bool {
        self.allowed_tools.iter().any(|t| t.as_str() == tool)
    }

    pub fn prompt_tokens(&self) -> u64 {
        estimate_tokens(&self.system_prompt)
    }

    pub fn builtin(kind: AgentKind) -> AgentDefinition {
        let text = BUILTIN.iter().find(|(k, _)| *k == kind).map(|(_, t)| *t).expect("every kind has a builtin");
        parse_definition(text, &format!("builtin:{kind}")).expect("builtin definitions parse")
    }
}

fn malformed(origin: &str, reason: impl Into<String>) -> DefinitionError {
    DefinitionError::MalformedFrontmatter {
        origin: origin.to_string(),
        reason: reason.into(),
    }
}

/// Parse definition text. The body after the closing `---` becomes the
/// system prompt verbatim; tools come from the roster, never the file.
pub fn parse_definition(text: &str, origin: &str) -> Result<AgentDefinition, DefinitionError> {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut lines = text.split_inclusive('\n');
    match lines.next() {
        Some(first) if first.trim_end() == "---" => {}
        _ => return Err(malformed(origin, "file must start with a `---` line")),
    }
    let mut yaml = String::new();
    let mut closed = false;
    let mut consumed = text.split_inclusive('\n').next().map_or(0, str::len);
    for line in lines {
        consumed += line.len();
        if line.trim_end() == "---" {
            closed = true;
            break;
        }
        yaml.push_str(line);
    }
    if !closed {
        return Err(malformed(origin, "no closing `---` line"));
    }
    let fm: Frontmatter = serde_yaml::from_str(&yaml).map_err(|e| malformed(origin, e.to_string()))?;
    let name = fm
        .name
        .map(|n| n.trim().to_string())
        .filter(|n| !n.is_empty())
        .ok_or_else(|| malformed(origin, "missing `name`"))?;
    let kind = AgentKind::ALL
        .into_iter()
        .find(|k| k.name() == name)
        .ok_or_else(|| DefinitionError::UnknownAgentName {
            origin: origin.to_string(),
            name: name.clone(),
        })?;
    let def = AgentDefinition {
        kind,
        name,
        description: fm.description,
        model: fm.model.unwrap_or_else(|| INHERIT.to_string()),
        system_prompt: text[consumed..].to_string(),
        allowed_tools: kind.allowed_tools().to_vec(),
    };
    if def.prompt_tokens() >= PROMPT_TOKEN_BUDGET {
        log::warn!(
            "{origin}: system prompt is ~{} tokens (budget {PROMPT_TOKEN_BUDGET})",
            def.prompt_tokens()
        );
    }
    Ok(def)
}

pub fn load_agent_definition(path: &Path) -> Result<AgentDefinition, DefinitionError> {
    let text = fs::read_to_string(path).map_err(|e| DefinitionError::Io(path.to_path_buf(), e))?;
    parse_definition(&text, &path.display().to_string())
}

/// The four definitions in use: `<dir>/<name>.md` where present, the
/// built-in default otherwise.
#[derive(Debug, Clone)]
pub struct AgentSet {
    defs: Vec<AgentDefinition>,
}

impl AgentSet {
    pub fn builtin() -> Self {
        AgentSet {
            defs: AgentKind::ALL.into_iter().map(AgentDefinition::builtin).collect(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, DefinitionError> {
        let mut defs = Vec::new();
        for kind in AgentKind::ALL {
            let path = dir.join(format!("{}.md", kind.name()));
            let def = if path.exists() {
                let d = load_agent_definition(&path)?;
                if d.kind != kind {
                    return Err(malformed(
                        &path.display().to_string(),
                        format!("declares `{}` but the file is for `{}`", d.name, kind),
                    ));
                }
                d
            } else {
                AgentDefinition::builtin(kind)
            };
            defs.push(def);
        }
        Ok(AgentSet { defs })
    }

    pub fn get(&self, kind: AgentKind) -> &AgentDefinition {
        self.defs.iter().find(|d| d.kind == kind).expect("set holds every kind")
    }
}
