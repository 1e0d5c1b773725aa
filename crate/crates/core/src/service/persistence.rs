//! File-backed session storage.
//!
//! Layout under the root directory:
//!
//! ```text
//! sessions/{id}/state.json     config and creation time
//! sessions/{id}/entities.json  entity store snapshot {session_id, records}
//! sessions/{id}/log.jsonl      append-only turns and traces
//! private/{id}/map.json        anonymization map (raw PII, keep access tight)
//! ```
//!
//! Snapshots are replaced atomically. The log append is the commit point of a
//! request: snapshots are written first, so a crash mid-request can leave
//! extra map entries but never a turn that refers to an unknown placeholder.

use crate::memory::{EntityStore, EntityStoreSnapshot, ShortTermBuffer, Turn};
use crate::privacy::AnonymizationMap;
use crate::rag::{ResponseTrace, Session, SessionConfig};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
    #[error("session {0} not found")]
    NotFound(String),
    #[error("invalid session id {0:?}")]
    InvalidId(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.{}.tmp", uuid::Uuid::new_v4().simple()));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    if let Ok(d) = File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Turn(Turn),
    Trace(ResponseTrace),
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionMeta {
    session_id: String,
    config: SessionConfig,
    created_at: DateTime<Utc>,
}

#[derive(Debug, Clone)]
pub struct PersistenceStore {
    root: PathBuf,
}

pub fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl PersistenceStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let root = root.into();
        for sub in ["sessions", "private"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        restrict(&root.join("private"));
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn session_dir(&self, id: &str) -> Result<PathBuf, StorageError> {
        if !valid_session_id(id) {
            return Err(StorageError::InvalidId(id.to_string()));
        }
        Ok(self.root.join("sessions").join(id))
    }

    pub fn map_path(&self, id: &str) -> Result<PathBuf, StorageError> {
        if !valid_session_id(id) {
            return Err(StorageError::InvalidId(id.to_string()));
        }
        Ok(self.root.join("private").join(id).join("map.json"))
    }

    pub fn log_path(&self, id: &str) -> Result<PathBuf, StorageError> {
        Ok(self.session_dir(id)?.join("log.jsonl"))
    }

    pub fn exists(&self, id: &str) -> bool {
        self.session_dir(id).map(|d| d.join("state.json").exists()).unwrap_or(false)
    }

    /// Writes a fresh session: meta, empty snapshots and an empty log.
    pub fn create(&self, session: &Session) -> Result<(), StorageError> {
        let dir = self.session_dir(&session.session_id)?;
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let meta = SessionMeta {
            session_id: session.session_id.clone(),
            config: session.config.clone(),
            created_at: session.created_at,
        };
        self.write_json(&dir.join("state.json"), &meta)?;
        self.write_snapshots(session)?;
        let log = dir.join("log.jsonl");
        OpenOptions::new().create(true).append(true).open(&log).map_err(io_err(&log))?;
        Ok(())
    }

    /// Persists the turns and trace produced by one request. Snapshots go
    /// first; the log append commits.
    pub fn commit(&self, session: &Session, turns: &[Turn], trace: Option<&ResponseTrace>) -> Result<(), StorageError> {
        self.write_snapshots(session)?;
        let mut records: Vec<LogRecord> = turns.iter().cloned().map(LogRecord::Turn).collect();
        if let Some(t) = trace {
            records.push(LogRecord::Trace(t.clone()));
        }
        self.append_log(&session.session_id, &records)
    }

    fn write_snapshots(&self, session: &Session) -> Result<(), StorageError> {
        let dir = self.session_dir(&session.session_id)?;
        self.write_json(&dir.join("entities.json"), &session.entity_store.snapshot(&session.session_id))?;
        let map_path = self.map_path(&session.session_id)?;
        if let Some(parent) = map_path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
            restrict(parent);
        }
        self.write_json(&map_path, &session.anonymization_map)
    }

    fn append_log(&self, id: &str, records: &[LogRecord]) -> Result<(), StorageError> {
        let path = self.log_path(id)?;
        let mut buf = Vec::new();
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(|e| corrupt(&path, e))?;
            buf.push(b'\n');
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(&buf).map_err(io_err(&path))?;
        f.sync_all().map_err(io_err(&path))
    }

    fn write_json<T: Serialize>(&self, path: &Path, value: &T) -> Result<(), StorageError> {
        let bytes = serde_json::to_vec_pretty(value).map_err(|e| corrupt(path, e))?;
        write_atomic(path, &bytes).map_err(io_err(path))
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, path: &Path) -> Result<T, StorageError> {
        let raw = fs::read(path).map_err(io_err(path))?;
        serde_json::from_slice(&raw).map_err(|e| corrupt(path, e))
    }

    /// Log records in order. A torn final line (crash during append) is dropped.
    pub fn read_log(&self, id: &str) -> Result<Vec<LogRecord>, StorageError> {
        let path = self.log_path(id)?;
        let f = File::open(&path).map_err(io_err(&path))?;
        let lines: Vec<String> = BufReader::new(f)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(io_err(&path))?;
        let mut out = Vec::with_capacity(lines.len());
        let last = lines.len().saturating_sub(1);
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(line) {
                Ok(r) => out.push(r),
                Err(e) if i == last => {
                    tracing::warn!(path = %path.display(), error = %e, "dropping torn log tail");
                }
                Err(e) => return Err(corrupt(&path, e)),
            }
        }
        Ok(out)
    }

    pub fn traces(&self, id: &str) -> Result<Vec<ResponseTrace>, StorageError> {
        Ok(self
            .read_log(id)?
            .into_iter()
            .filter_map(|r| match r {
                LogRecord::Trace(t) => Some(t),
                LogRecord::Turn(_) => None,
            })
            .collect())
    }

    /// Rebuilds a session. The window is re-derived from the log tail, so it
    /// is always a suffix of the full log.
    pub fn load(&self, id: &str) -> Result<Session, StorageError> {
        if !self.exists(id) {
            return Err(StorageError::NotFound(id.to_string()));
        }
        let dir = self.session_dir(id)?;
        let meta: SessionMeta = self.read_json(&dir.join("state.json"))?;
        let snapshot: EntityStoreSnapshot = self.read_json(&dir.join("entities.json"))?;
        let map: AnonymizationMap = self.read_json(&self.map_path(id)?)?;
        let log_path = self.log_path(id)?;
        let full_log: Vec<Turn> = self
            .read_log(id)?
            .into_iter()
            .filter_map(|r| match r {
                LogRecord::Turn(t) => Some(t),
                LogRecord::Trace(_) => None,
            })
            .collect();
        let mut buffer = ShortTermBuffer::new(meta.config.short_term_n);
        for (i, t) in full_log.iter().enumerate() {
            if t.index != i as u64 {
                return Err(StorageError::Corrupt {
                    path: log_path,
                    message: format!("turn index {} at position {i}", t.index),
                });
            }
            buffer.append_turn(t.clone()).expect("indices checked above");
        }
        Ok(Session {
            session_id: meta.session_id,
            entity_store: EntityStore::from_snapshot(snapshot, meta.config.update_every),
            config: meta.config,
            buffer,
            anonymization_map: map,
            full_log,
            created_at: meta.created_at,
        })
    }

    pub fn list(&self) -> Result<Vec<String>, StorageError> {
        let dir = self.root.join("sessions");
        let mut ids: Vec<String> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        Ok(ids)
    }

    pub fn delete(&self, id: &str) -> Result<(), StorageError> {
        if !self.exists(id) {
            return Err(StorageError::NotFound(id.to_string()));
        }
        let dir = self.session_dir(id)?;
        fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        let private = self.root.join("private").join(id);
        if private.exists() {
            fs::remove_dir_all(&private).map_err(io_err(&private))?;
        }
        Ok(())
    }
}

fn corrupt(path: &Path, e: serde_json::Error) -> StorageError {
    StorageError::Corrupt { path: path.to_path_buf(), message: e.to_string() }
}

#[cfg(unix)]
fn restrict(dir: &Path) {
    use std::os::unix::fs::PermissionsExt;
    let _ = fs::set_permissions(dir, fs::Permissions::from_mode(0o700));
}

#[cfg(not(unix))]
fn restrict(_dir: &Path) {}
