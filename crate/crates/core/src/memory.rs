//! Short-term conversation window and long-term entity store.

use crate::embedding::tokenize;
use crate::llm::{summarize_entity, LlmError, LlmProvider, SummaryPrompt};
use crate::privacy::{PiiKind, PiiSpan};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

pub const DEFAULT_WINDOW: usize = 10;
pub const DEFAULT_UPDATE_EVERY: u64 = 10;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MemoryError {
    #[error("turn index gap: expected {expected}, got {got}")]
    IndexGap { expected: u64, got: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    User,
    Assistant,
}

impl TurnRole {
    pub fn label(self) -> &'static str {
        match self {
            TurnRole::User => "User",
            TurnRole::Assistant => "Assistant",
        }
    }
}

/// One message of a conversation, stored in anonymized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub index: u64,
    pub role: TurnRole,
    pub content: String,
    pub timestamp: DateTime<Utc>,
}

impl Turn {
    pub fn new(index: u64, role: TurnRole, content: impl Into<String>) -> Self {
        Self {
            index,
            role,
            content: content.into(),
            timestamp: Utc::now(),
        }
    }
}

/// Sliding window over the most recent turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortTermBuffer {
    capacity: usize,
    turns: VecDeque<Turn>,
    next_index: u64,
}

impl ShortTermBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        Self {
            capacity,
            turns: VecDeque::with_capacity(capacity),
            next_index: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter()
    }

    pub fn to_vec(&self) -> Vec<Turn> {
        self.turns.iter().cloned().collect()
    }

    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    pub fn append_turn(&mut self, turn: Turn) -> Result<(), MemoryError> {
        if turn.index != self.next_index {
            return Err(MemoryError::IndexGap {
                expected: self.next_index,
                got: turn.index,
            });
        }
        if self.turns.len() == self.capacity {
            self.turns.pop_front();
        }
        self.next_index += 1;
        self.turns.push_back(turn);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    /// Case-folded anonymized entity name.
    pub name: String,
    pub summary: String,
    pub last_updated_turn: u64,
}

fn default_kinds() -> Vec<PiiKind> {
    vec![PiiKind::Person]
}

/// Long-term memory: anonymized entity name → running summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityStore {
    records: Vec<EntityRecord>,
    update_every: u64,
    #[serde(default = "default_kinds")]
    tracked_kinds: Vec<PiiKind>,
}

impl Default for EntityStore {
    fn default() -> Self {
        Self::new(DEFAULT_UPDATE_EVERY)
    }
}

/// Per-session snapshot file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityStoreSnapshot {
    pub session_id: String,
    pub records: Vec<EntityRecord>,
}

impl EntityStore {
    pub fn new(update_every: u64) -> Self {
        assert!(update_every >= 1, "update cadence must be at least 1");
        Self {
            records: Vec::new(),
            update_every,
            tracked_kinds: default_kinds(),
        }
    }

    pub fn with_tracked_kinds(mut self, kinds: Vec<PiiKind>) -> Self {
        self.tracked_kinds = kinds;
        self
    }

    pub fn update_every(&self) -> u64 {
        self.update_every
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&EntityRecord> {
        let key = name.to_lowercase();
        self.records.iter().find(|r| r.name == key)
    }

    pub fn snapshot(&self, session_id: &str) -> EntityStoreSnapshot {
        EntityStoreSnapshot {
            session_id: session_id.to_string(),
            records: self.records.clone(),
        }
    }

    pub fn from_snapshot(snapshot: EntityStoreSnapshot, update_every: u64) -> Self {
        let mut store = Self::new(update_every);
        store.records = snapshot.records;
        store
    }

    /// Adds stub records for tracked-kind spans not yet in the store. Spans
    /// must already carry anonymized surfaces. Returns the keys added.
    pub fn register_entities(&mut self, spans: &[PiiSpan], turn_index: u64) -> Vec<String> {
        let mut added = Vec::new();
        for span in spans {
            if !self.tracked_kinds.contains(&span.kind) {
                continue;
            }
            let key = span.surface.to_lowercase();
            if key.trim().is_empty() || self.records.iter().any(|r| r.name == key) {
                continue;
            }
            self.records.push(EntityRecord {
                name: key.clone(),
                summary: String::new(),
                last_updated_turn: turn_index,
            });
            added.push(key);
        }
        added
    }

    pub fn is_update_due(&self, exchange: u64) -> bool {
        exchange > 0 && exchange % self.update_every == 0
    }

    /// Cadence-gated summary refresh. Returns `Ok(None)` when the cadence is
    /// not reached, otherwise the names that were sent to the model.
    pub fn maybe_update_entities(
        &mut self,
        history: &[Turn],
        llm: &dyn LlmProvider,
        prompt: &SummaryPrompt,
        exchange: u64,
        label: &dyn Fn(&str) -> String,
    ) -> Result<Option<Vec<String>>, LlmError> {
        if !self.is_update_due(exchange) {
            return Ok(None);
        }
        self.update_now(history, llm, prompt, exchange, label).map(Some)
    }

    /// Refreshes every entity mentioned in a user turn of `history`. All
    /// summaries are computed before any is written, so an LLM failure leaves
    /// the store untouched.
    pub fn update_now(
        &mut self,
        history: &[Turn],
        llm: &dyn LlmProvider,
        prompt: &SummaryPrompt,
        exchange: u64,
        label: &dyn Fn(&str) -> String,
    ) -> Result<Vec<String>, LlmError> {
        let user_tokens: Vec<Vec<String>> = history
            .iter()
            .filter(|t| t.role == TurnRole::User)
            .map(|t| mention_tokens(&t.content))
            .collect();
        let mut staged = Vec::new();
        for (i, record) in self.records.iter().enumerate() {
            let key_tokens = mention_tokens(&record.name);
            if !user_tokens.iter().any(|toks| contains_seq(toks, &key_tokens)) {
                continue;
            }
            let summary = summarize_entity(
                &label(&record.name),
                &record.summary,
                history,
                llm,
                prompt,
            )?;
            staged.push((i, summary));
        }
        let mut touched = Vec::with_capacity(staged.len());
        for (i, summary) in staged {
            let record = &mut self.records[i];
            // an empty reply would erase what we know; keep the old text
            if !summary.trim().is_empty() {
                record.summary = summary;
            }
            record.last_updated_turn = exchange;
            touched.push(record.name.clone());
        }
        Ok(touched)
    }
}

/// Tokens for entity matching: possessive `'s` dropped so "Henry's" is a
/// mention of "Henry".
fn mention_tokens(text: &str) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| match t.strip_suffix("'s") {
            Some(stem) if !stem.is_empty() => stem.to_string(),
            _ => t,
        })
        .collect()
}

fn contains_seq(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Records whose name occurs as a whole (case-folded) token sequence in the
/// query. Stubs without a summary are never returned.
pub fn lookup_entities(query: &str, store: &EntityStore) -> Vec<EntityRecord> {
    let tokens = mention_tokens(query);
    store
        .records
        .iter()
        .filter(|r| !r.summary.trim().is_empty())
        .filter(|r| contains_seq(&tokens, &mention_tokens(&r.name)))
        .cloned()
        .collect()
}
