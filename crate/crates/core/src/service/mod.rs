//! Session management and the HTTP API.

mod http;
pub mod persistence;

pub use http::{router, serve, ErrorBody};
pub use persistence::{LogRecord, PersistenceStore, StorageError};

use crate::memory::Turn;
use crate::rag::{respond, ConfigError, Engine, EntityView, PipelineError, Response, Session, SessionConfig};
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("session {0} not found")]
    SessionNotFound(String),
    #[error(transparent)]
    Validation(#[from] ConfigError),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

/// Owns live sessions. Each session sits behind its own lock so one session
/// handles one request at a time while distinct sessions run in parallel.
pub struct SessionManager {
    engine: Engine,
    store: Option<PersistenceStore>,
    defaults: SessionConfig,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

impl SessionManager {
    pub fn new(engine: Engine, store: Option<PersistenceStore>, defaults: SessionConfig) -> Self {
        Self {
            engine,
            store,
            defaults,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn defaults(&self) -> &SessionConfig {
        &self.defaults
    }

    pub fn store(&self) -> Option<&PersistenceStore> {
        self.store.as_ref()
    }

    pub fn create_session(&self, config: Option<SessionConfig>) -> Result<String, ServiceError> {
        let config = config.unwrap_or_else(|| self.defaults.clone());
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::new(id.clone(), config)?;
        if let Some(store) = &self.store {
            store.create(&session)?;
        }
        self.sessions.lock().unwrap().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>, ServiceError> {
        let mut live = self.sessions.lock().unwrap();
        if let Some(h) = live.get(id) {
            return Ok(h.clone());
        }
        let store = self.store.as_ref().ok_or_else(|| ServiceError::SessionNotFound(id.to_string()))?;
        let session = store.load(id).map_err(|e| match e {
            StorageError::NotFound(_) | StorageError::InvalidId(_) => ServiceError::SessionNotFound(id.to_string()),
            other => ServiceError::Storage(other),
        })?;
        let h = Arc::new(Mutex::new(session));
        live.insert(id.to_string(), h.clone());
        Ok(h)
    }

    /// Runs one exchange and persists it before returning. If persisting
    /// fails the in-memory session is rolled back too.
    pub fn post_message(&self, id: &str, text: &str) -> Result<Response, ServiceError> {
        if text.trim().is_empty() {
            return Err(ServiceError::BadRequest("text must not be empty".into()));
        }
        let h = self.handle(id)?;
        let mut session = h.lock().unwrap_or_else(|p| p.into_inner());
        let before = session.clone();
        let response = respond(&self.engine, &mut session, text)?;
        if let Some(store) = &self.store {
            let new_turns: Vec<Turn> = session.full_log[before.full_log.len()..].to_vec();
            if let Err(e) = store.commit(&session, &new_turns, Some(&response.trace)) {
                *session = before;
                return Err(e.into());
            }
        }
        Ok(response)
    }

    pub fn get_entities(&self, id: &str) -> Result<Vec<EntityView>, ServiceError> {
        let h = self.handle(id)?;
        let session = h.lock().unwrap_or_else(|p| p.into_inner());
        Ok(session.entity_views())
    }

    pub fn get_history(&self, id: &str, limit: usize) -> Result<Vec<Turn>, ServiceError> {
        if limit == 0 {
            return Err(ServiceError::BadRequest("limit must be at least 1".into()));
        }
        let h = self.handle(id)?;
        let session = h.lock().unwrap_or_else(|p| p.into_inner());
        Ok(session.history_restored(limit))
    }

    /// Copy of the current session state.
    pub fn snapshot(&self, id: &str) -> Result<Session, ServiceError> {
        let h = self.handle(id)?;
        let session = h.lock().unwrap_or_else(|p| p.into_inner());
        Ok(session.clone())
    }

    pub fn delete_session(&self, id: &str) -> Result<(), ServiceError> {
        let known = self.handle(id).is_ok();
        self.sessions.lock().unwrap().remove(id);
        if let Some(store) = &self.store {
            if store.exists(id) {
                store.delete(id)?;
                return Ok(());
            }
        }
        if known {
            Ok(())
        } else {
            Err(ServiceError::SessionNotFound(id.to_string()))
        }
    }
}
