//! Versioned, canonical JSON snapshots.
//!
//! Keys are sorted (serde_json's map is ordered), floats round-trip exactly,
//! and the file ends with a newline, so saving the same state twice yields
//! the same bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::events::Event;
use super::state::SessionState;
use super::SessionError;

pub const SCHEMA_VERSION: u32 = 1;

/// Keys whose values are wall-clock times.
const TIME_KEYS: [&str; 5] = ["timestamp", "created_at", "started_at", "finished_at", "published"];

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum PersistError {
    #[error("i/o error: {0}")]
    Io(String),
    #[error("unknown schema version {0}")]
    UnknownSchemaVersion(u64),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
}

impl From<std::io::Error> for PersistError {
    fn from(e: std::io::Error) -> Self {
        PersistError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub schema_version: u32,
    pub state: SessionState,
    pub events: Vec<Event>,
}

/// Pretty-printed JSON with sorted keys and a trailing newline.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("session types serialize to JSON");
    let mut s = serde_json::to_string_pretty(&v).expect("JSON values always print");
    s.push('\n');
    s
}

pub fn snapshot_bytes(state: &SessionState, events: &[Event]) -> String {
    canonical_json(&SnapshotFile {
        schema_version: SCHEMA_VERSION,
        state: state.clone(),
        events: events.to_vec(),
    })
}

pub fn save_snapshot(path: &Path, state: &SessionState, events: &[Event]) -> Result<(), PersistError> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, snapshot_bytes(state, events))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Parses a snapshot and re-checks it: the version must be known, the state
/// must equal the replay of the bundled log and every chunk must still match
/// its abstract.
pub fn parse_snapshot(text: &str) -> Result<SnapshotFile, SessionError> {
    let value: Value = serde_json::from_str(text).map_err(|e| PersistError::CorruptSnapshot(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| PersistError::CorruptSnapshot("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(PersistError::UnknownSchemaVersion(version).into());
    }
    let file: SnapshotFile =
        serde_json::from_value(value).map_err(|e| PersistError::CorruptSnapshot(e.to_string()))?;
    for run in file.state.pipelines.values() {
        for node in &run.nodes {
            if let Some(crate::workflow::NodePayload::ReviewResult(r)) = &node.output {
                r.verify(&file.state.corpus)?;
            }
        }
    }
    if !file.events.is_empty() {
        let replayed = SessionState::replay(&file.events)?;
        if replayed != file.state {
            return Err(PersistError::CorruptSnapshot("state differs from its event log".into()).into());
        }
    }
    Ok(file)
}

pub fn load_snapshot(path: &Path) -> Result<SnapshotFile, SessionError> {
    let text = std::fs::read_to_string(path).map_err(PersistError::from)?;
    parse_snapshot(&text)
}

/// The JSON form of `value` with every wall-clock field removed, for
/// comparisons that should ignore when things happened.
pub fn without_timestamps<T: Serialize>(value: &T) -> Value {
    fn strip(v: &mut Value) {
        match v {
            Value::Object(map) => {
                map.retain(|k, _| !TIME_KEYS.contains(&k.as_str()));
                map.values_mut().for_each(strip);
            }
            Value::Array(items) => items.iter_mut().for_each(strip),
            _ => {}
        }
    }
    let mut v = serde_json::to_value(value).expect("session types serialize to JSON");
    strip(&mut v);
    v
}
