//! `state.json`: the loop state, written atomically after every phase
//! transition.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use autolab_core::state::{LoopState, STATE_VERSION};

use crate::fsutil::atomic_write;

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("state file {path} is corrupted: {message}. Fix or move it aside to start fresh")]
    Corrupt { path: PathBuf, message: String },
    #[error("state file {path} has version {found}; this build reads version {STATE_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("state file {0}: {1}")]
    Io(PathBuf, #[source] io::Error),
}

pub fn load_state(path: &Path) -> Result<Option<LoopState>, StateError> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(StateError::Io(path.to_path_buf(), e)),
    };
    let corrupt = |message: String| StateError::Corrupt {
        path: path.to_path_buf(),
        message,
    };
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| corrupt(e.to_string()))?;
    let found = v.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
    if found != STATE_VERSION {
        return Err(StateError::Version {
            path: path.to_path_buf(),
            found,
        });
    }
    let state: LoopState = serde_json::from_value(v).map_err(|e| corrupt(e.to_string()))?;
    state.ledger.verify().map_err(|e| corrupt(e.to_string()))?;
    Ok(Some(state))
}

pub fn save_state(path: &Path, state: &LoopState) -> Result<(), StateError> {
    let text = serde_json::to_string_pretty(state).expect("state serializes");
    atomic_write(path, text.as_bytes()).map_err(|e| StateError::Io(path.to_path_buf(), e))
}
