//! Loading the YAML configuration file and laying out project paths.

use std::fs;
use std::path::{Path, PathBuf};

use autolab_core::config::{is_known_key, Config, ConfigError};
use serde_yaml::Value;

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Validation(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: Config,
    /// Directory holding the config file; relative paths resolve from here.
    pub base_dir: PathBuf,
    /// Dotted names of keys this version does not understand.
    pub unknown_keys: Vec<String>,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, ConfigFileError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (config, unknown_keys) = parse_config(&text).map_err(|e| match e {
        ParseOrInvalid::Parse(message) => ConfigFileError::Parse {
            path: path.to_path_buf(),
            message,
        },
        ParseOrInvalid::Invalid(e) => ConfigFileError::Validation(e),
    })?;
    for k in &unknown_keys {
        log::warn!("{}: unknown config key `{k}` ignored", path.display());
    }
    let base_dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(LoadedConfig {
        config,
        base_dir,
        unknown_keys,
    })
}

#[derive(Debug)]
pub enum ParseOrInvalid {
    Parse(String),
    Invalid(ConfigError),
}

/// Parse and validate config text. Omitted keys take their defaults.
pub fn parse_config(text: &str) -> Result<(Config, Vec<String>), ParseOrInvalid> {
    let value: Value = serde_yaml::from_str(text).map_err(|e| ParseOrInvalid::Parse(e.to_string()))?;
    let value = match value {
        Value::Null => Value::Mapping(Default::default()),
        v @ Value::Mapping(_) => v,
        _ => return Err(ParseOrInvalid::Parse("top level must be a mapping".into())),
    };
    let mut unknown = Vec::new();
    collect_unknown(&value, "", &mut unknown);
    let config: Config = serde_yaml::from_value(value).map_err(|e| ParseOrInvalid::Parse(e.to_string()))?;
    config.validate().map_err(ParseOrInvalid::Invalid)?;
    Ok((config, unknown))
}

fn collect_unknown(v: &Value, prefix: &str, out: &mut Vec<String>) {
    let Value::Mapping(map) = v else { return };
    for (k, child) in map {
        let key = match k {
            Value::String(s) => s.clone(),
            other => format!("{other:?}"),
        };
        let dotted = if prefix.is_empty() { key } else { format!("{prefix}.{key}") };
        if !is_known_key(&dotted) {
            out.push(dotted);
        } else if prefix.is_empty() {
            collect_unknown(child, &dotted, out);
        }
    }
}

pub fn to_yaml(cfg: &Config) -> String {
    serde_yaml::to_string(cfg).expect("config serializes")
}

/// Absolute locations of everything the daemon reads and writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProjectLayout {
    pub workspace: PathBuf,
    pub brief: PathBuf,
    pub memory_log: PathBuf,
    pub state: PathBuf,
    pub journal: PathBuf,
    pub lock: PathBuf,
    pub agents_dir: PathBuf,
}

pub const STATE_FILE: &str = "state.json";
pub const MEMORY_FILE: &str = "MEMORY_LOG.md";
pub const BRIEF_FILE: &str = "PROJECT_BRIEF.md";
pub const JOURNAL_FILE: &str = "cycles.log";
pub const LOCK_FILE: &str = ".autolab.lock";

impl ProjectLayout {
    /// The workspace resolves against `base_dir`; the brief against the
    /// workspace (it lives at the workspace root beside the memory log).
    pub fn resolve(cfg: &Config, base_dir: &Path) -> Self {
        let workspace = absolutize(&base_dir.join(&cfg.project.workspace));
        let brief = workspace.join(&cfg.project.brief);
        ProjectLayout {
            memory_log: workspace.join(MEMORY_FILE),
            state: workspace.join(STATE_FILE),
            journal: workspace.join(JOURNAL_FILE),
            lock: workspace.join(LOCK_FILE),
            agents_dir: absolutize(&base_dir.join("agents")),
            brief,
            workspace,
        }
    }
}

fn absolutize(p: &Path) -> PathBuf {
    let abs = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    };
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            std::path::Component::CurDir => {}
            std::path::Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}
