//! On-disk layout: `<data_dir>/<session_id>/events.jsonl` (one event per
//! line, appended as they happen) and `snapshot.json` (written on demand).

use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::ids::SessionId;

use super::events::Event;
use super::snapshot::{save_snapshot, PersistError};
use super::state::SessionState;
use super::SessionError;

#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, PersistError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir(&self, id: &SessionId) -> PathBuf {
        self.root.join(id.as_str())
    }

    pub fn log_path(&self, id: &SessionId) -> PathBuf {
        self.dir(id).join("events.jsonl")
    }

    pub fn snapshot_path(&self, id: &SessionId) -> PathBuf {
        self.dir(id).join("snapshot.json")
    }

    pub fn append(&self, id: &SessionId, event: &Event) -> Result<(), PersistError> {
        fs::create_dir_all(self.dir(id))?;
        let mut line = serde_json::to_string(&serde_json::to_value(event).expect("events serialize"))
            .expect("JSON values always print");
        line.push('\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.log_path(id))?;
        f.write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn write_snapshot(&self, state: &SessionState, events: &[Event]) -> Result<PathBuf, PersistError> {
        fs::create_dir_all(self.dir(&state.session_id))?;
        let path = self.snapshot_path(&state.session_id);
        save_snapshot(&path, state, events)?;
        Ok(path)
    }

    pub fn read_log(&self, id: &SessionId) -> Result<Vec<Event>, SessionError> {
        let f = fs::File::open(self.log_path(id)).map_err(PersistError::from)?;
        let mut events = Vec::new();
        for line in BufReader::new(f).lines() {
            let line = line.map_err(PersistError::from)?;
            if line.trim().is_empty() {
                continue;
            }
            let e: Event = serde_json::from_str(&line).map_err(|e| PersistError::CorruptSnapshot(e.to_string()))?;
            events.push(e);
        }
        Ok(events)
    }

    /// Ids of every session with a log on disk, sorted.
    pub fn sessions(&self) -> Result<Vec<SessionId>, PersistError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join("events.jsonl").is_file() {
                ids.push(SessionId(entry.file_name().to_string_lossy().into_owned()));
            }
        }
        ids.sort();
        Ok(ids)
    }
}
