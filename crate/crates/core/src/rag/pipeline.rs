use super::config::{ConfigError, SessionConfig};
use super::template::{assemble_prompt, AssembledPrompt, TemplateError, TemplateSet};
use crate::embedding::{EmbeddingError, EmbeddingProvider};
use crate::knowledge_base::{KbError, KnowledgeBase, RetrievalResult};
use crate::llm::{check_outbound, complete, LlmError, LlmProvider, SummaryPrompt};
use crate::memory::{lookup_entities, EntityRecord, EntityStore, MemoryError, ShortTermBuffer, Turn, TurnRole};
use crate::privacy::{
    anonymize, detect_pii, mask_known, restore, AnonymizationMap, PiiDetector, PrivacyError, RuleBasedDetector,
    SurrogatePools,
};
use chrono::{DateTime, Duration, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    DetectPii,
    Anonymize,
    RegisterEntities,
    Embed,
    Retrieve,
    LookupEntities,
    AssemblePrompt,
    PrivacyGuard,
    Complete,
    AppendTurns,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DetectPii => "detect_pii",
            Stage::Anonymize => "anonymize",
            Stage::RegisterEntities => "register_entities",
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::LookupEntities => "lookup_entities",
            Stage::AssemblePrompt => "assemble_prompt",
            Stage::PrivacyGuard => "privacy_guard",
            Stage::Complete => "complete",
            Stage::AppendTurns => "append_turns",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error(transparent)]
    Privacy(#[from] PrivacyError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Retrieval(#[from] KbError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
}

/// A failed `respond` call. The session is back at its pre-call state.
#[derive(Debug, thiserror::Error)]
#[error("stage {stage} failed: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

fn at<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError { stage, source: e.into() }
}

/// Where turn timestamps come from. `Logical` stamps turn `i` at `start + i`
/// seconds, which makes whole sessions reproducible byte for byte.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Clock {
    #[default]
    System,
    Logical { start: DateTime<Utc> },
}

impl Clock {
    pub fn logical() -> Self {
        Clock::Logical { start: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap() }
    }

    pub fn stamp(&self, index: u64) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Logical { start } => *start + Duration::seconds(index as i64),
        }
    }
}

/// Shared, read-only machinery used by every session.
#[derive(Clone)]
pub struct Engine {
    pub detector: Arc<dyn PiiDetector>,
    pub pools: Arc<SurrogatePools>,
    pub embedder: Arc<dyn EmbeddingProvider>,
    pub kb: Option<Arc<KnowledgeBase>>,
    pub llm: Arc<dyn LlmProvider>,
    pub templates: Arc<TemplateSet>,
    pub summary_prompt: SummaryPrompt,
    pub clock: Clock,
}

impl Engine {
    pub fn new(embedder: Arc<dyn EmbeddingProvider>, llm: Arc<dyn LlmProvider>) -> Self {
        Self {
            detector: Arc::new(RuleBasedDetector::builtin()),
            pools: Arc::new(SurrogatePools::builtin()),
            embedder,
            kb: None,
            llm,
            templates: Arc::new(TemplateSet::builtin()),
            summary_prompt: SummaryPrompt::default(),
            clock: Clock::System,
        }
    }

    pub fn with_kb(mut self, kb: Arc<KnowledgeBase>) -> Self {
        self.kb = Some(kb);
        self
    }

    pub fn with_detector(mut self, detector: Arc<dyn PiiDetector>) -> Self {
        self.detector = detector;
        self
    }

    pub fn with_pools(mut self, pools: SurrogatePools) -> Self {
        self.pools = Arc::new(pools);
        self
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_summary_prompt(mut self, prompt: SummaryPrompt) -> Self {
        self.summary_prompt = prompt;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_llm(mut self, llm: Arc<dyn LlmProvider>) -> Self {
        self.llm = llm;
        self
    }
}

/// Per-user conversation state. Everything except the map is anonymized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub config: SessionConfig,
    pub buffer: ShortTermBuffer,
    pub entity_store: EntityStore,
    pub anonymization_map: AnonymizationMap,
    pub full_log: Vec<Turn>,
    pub created_at: DateTime<Utc>,
}

/// Entity as shown to the service user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityView {
    pub name: String,
    pub summary: String,
    pub last_updated_turn: u64,
    pub display_name: String,
}

impl Session {
    pub fn new(session_id: impl Into<String>, config: SessionConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let session_id = session_id.into();
        Ok(Self {
            buffer: ShortTermBuffer::new(config.short_term_n),
            entity_store: EntityStore::new(config.update_every),
            anonymization_map: AnonymizationMap::new(session_id.clone(), config.seed),
            full_log: Vec::new(),
            created_at: Utc::now(),
            session_id,
            config,
        })
    }

    /// Completed user+assistant exchanges.
    pub fn exchanges(&self) -> u64 {
        self.full_log.iter().filter(|t| t.role == TurnRole::Assistant).count() as u64
    }

    /// The last `limit` turns with placeholders swapped back to originals.
    pub fn history_restored(&self, limit: usize) -> Vec<Turn> {
        let skip = self.full_log.len().saturating_sub(limit);
        self.full_log[skip..]
            .iter()
            .map(|t| Turn {
                content: restore(&t.content, &self.anonymization_map),
                ..t.clone()
            })
            .collect()
    }

    /// Summarized entities with their original names resolved. Stubs are hidden.
    pub fn entity_views(&self) -> Vec<EntityView> {
        self.entity_store
            .records()
            .iter()
            .filter(|r| !r.summary.trim().is_empty())
            .map(|r| EntityView {
                name: r.name.clone(),
                summary: restore(&r.summary, &self.anonymization_map),
                last_updated_turn: r.last_updated_turn,
                display_name: self
                    .anonymization_map
                    .entry_for_key(&r.name)
                    .map(|e| e.original.clone())
                    .unwrap_or_else(|| r.name.clone()),
            })
            .collect()
    }

    /// Placeholder spelling for a case-folded entity key.
    pub fn entity_label(&self, key: &str) -> String {
        self.anonymization_map
            .entry_for_key(key)
            .map(|e| e.placeholder.clone())
            .unwrap_or_else(|| key.to_string())
    }

    fn labelled(&self, records: Vec<EntityRecord>) -> Vec<EntityRecord> {
        records
            .into_iter()
            .map(|r| EntityRecord { name: self.entity_label(&r.name), ..r })
            .collect()
    }

    fn push_turn(&mut self, role: TurnRole, content: String, clock: &Clock) -> Result<(), MemoryError> {
        let index = self.full_log.len() as u64;
        let turn = Turn { index, role, content, timestamp: clock.stamp(index) };
        self.buffer.append_turn(turn.clone())?;
        self.full_log.push(turn);
        Ok(())
    }

    /// Runs the privacy and memory steps on a turn without calling the chat
    /// model. Used to seed a session with an earlier conversation.
    pub fn ingest_turn(&mut self, engine: &Engine, role: TurnRole, text: &str) -> Result<(), PipelineError> {
        let before = self.clone();
        let res = self.ingest_turn_inner(engine, role, text);
        if res.is_err() {
            *self = before;
        }
        res
    }

    fn ingest_turn_inner(&mut self, engine: &Engine, role: TurnRole, text: &str) -> Result<(), PipelineError> {
        let spans = detect_pii(text, engine.detector.as_ref()).map_err(at(Stage::DetectPii))?;
        let anon = anonymize(text, &spans, &mut self.anonymization_map, &engine.pools).map_err(at(Stage::Anonymize))?;
        let content = mask_known(&anon.text, &self.anonymization_map);
        if self.config.long_term && role == TurnRole::User {
            self.entity_store.register_entities(&anon.spans, self.full_log.len() as u64);
        }
        self.push_turn(role, content, &engine.clock).map_err(at(Stage::AppendTurns))
    }

    /// Summarizes every entity mentioned anywhere in the log, regardless of
    /// cadence. Failures leave the store as it was.
    pub fn force_entity_update(&mut self, engine: &Engine) -> Result<Vec<String>, LlmError> {
        let labels = self.clone();
        let exchange = self.exchanges();
        self.entity_store.update_now(
            &labels.full_log,
            engine.llm.as_ref(),
            &engine.summary_prompt,
            exchange,
            &|k| labels.entity_label(k),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTrace {
    pub exchange: u64,
    pub template: String,
    /// Best cosine against the corpus; absent when no knowledge base is loaded.
    pub similarity: Option<f64>,
    pub alpha: f64,
    pub gate_open: bool,
    pub question_id: Option<String>,
    /// Placeholder names of entities whose summaries went into the prompt.
    pub entities_used: Vec<String>,
    /// Placeholders that stand in for PII in this user message.
    pub placeholders: Vec<String>,
    /// Entities refreshed after this exchange, when the cadence fired.
    pub entity_update: Option<Vec<String>>,
    pub entity_update_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub reply: String,
    pub trace: ResponseTrace,
}

/// Everything computed for one message before the model is called.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub prompt: AssembledPrompt,
    pub anon_query: String,
    pub similarity: Option<f64>,
    pub retrieval: Option<RetrievalResult>,
    pub entities_used: Vec<String>,
    pub placeholders: Vec<String>,
}

fn prepare(engine: &Engine, session: &mut Session, user_message: &str) -> Result<Prepared, PipelineError> {
    let cfg = session.config.clone();
    let spans = detect_pii(user_message, engine.detector.as_ref()).map_err(at(Stage::DetectPii))?;
    let anon = anonymize(user_message, &spans, &mut session.anonymization_map, &engine.pools)
        .map_err(at(Stage::Anonymize))?;
    // a known original the detector missed this time must still not go out
    let anon_query = mask_known(&anon.text, &session.anonymization_map);
    let mut placeholders: Vec<String> = Vec::new();
    for s in &anon.spans {
        if !placeholders.contains(&s.surface) {
            placeholders.push(s.surface.clone());
        }
    }

    if cfg.long_term {
        session.entity_store.register_entities(&anon.spans, session.full_log.len() as u64);
    }

    let (similarity, retrieval) = match &engine.kb {
        Some(kb) => {
            let qvec = engine.embedder.embed(&anon_query).map_err(at(Stage::Embed))?;
            let (sim, hit) = kb.retrieve_scored(&qvec, cfg.alpha, cfg.k).map_err(at(Stage::Retrieve))?;
            let hit = hit.map(|mut r| {
                r.question_text = mask_known(&r.question_text, &session.anonymization_map);
                for a in &mut r.answers {
                    a.answer_text = mask_known(&a.answer_text, &session.anonymization_map);
                }
                r
            });
            (Some(sim), hit)
        }
        None => (None, None),
    };

    let entities = if cfg.long_term {
        session.labelled(lookup_entities(&anon_query, &session.entity_store))
    } else {
        Vec::new()
    };
    let history = if cfg.short_term { session.buffer.to_vec() } else { Vec::new() };
    let template = engine.templates.get(cfg.template);
    let prompt = assemble_prompt(template, &anon_query, retrieval.as_ref(), &history, &entities);

    Ok(Prepared {
        prompt,
        anon_query,
        similarity,
        retrieval,
        entities_used: entities.into_iter().map(|e| e.name).collect(),
        placeholders,
    })
}

/// Assembles the prompt for `user_message` without calling the model or
/// changing the session.
pub fn preview(engine: &Engine, session: &Session, user_message: &str) -> Result<Prepared, PipelineError> {
    let mut scratch = session.clone();
    prepare(engine, &mut scratch, user_message)
}

/// One full exchange. On error the session is restored to its state before
/// the call.
pub fn respond(engine: &Engine, session: &mut Session, user_message: &str) -> Result<Response, PipelineError> {
    let before = session.clone();
    let res = respond_inner(engine, session, user_message);
    if res.is_err() {
        *session = before;
    }
    res
}

fn respond_inner(engine: &Engine, session: &mut Session, user_message: &str) -> Result<Response, PipelineError> {
    let prepared = prepare(engine, session, user_message)?;
    let messages = prepared.prompt.messages();
    check_outbound(&messages, &session.anonymization_map).map_err(at(Stage::PrivacyGuard))?;
    let raw = complete(&messages, engine.llm.as_ref()).map_err(at(Stage::Complete))?;

    let stored_reply = mask_known(&raw, &session.anonymization_map);
    let reply = restore(&raw, &session.anonymization_map);

    session
        .push_turn(TurnRole::User, prepared.anon_query.clone(), &engine.clock)
        .map_err(at(Stage::AppendTurns))?;
    session
        .push_turn(TurnRole::Assistant, stored_reply, &engine.clock)
        .map_err(at(Stage::AppendTurns))?;
    let exchange = session.exchanges();

    let (entity_update, entity_update_error) = if session.config.long_term {
        let window = session.buffer.to_vec();
        let labels = session.clone();
        match session.entity_store.maybe_update_entities(
            &window,
            engine.llm.as_ref(),
            &engine.summary_prompt,
            exchange,
            &|k| labels.entity_label(k),
        ) {
            Ok(u) => (u, None),
            // a failed refresh keeps the stale summaries; the next cadence retries
            Err(e) => {
                tracing::warn!(session = %session.session_id, error = %e, "entity summary refresh failed");
                (None, Some(e.to_string()))
            }
        }
    } else {
        (None, None)
    };

    let cfg = &session.config;
    Ok(Response {
        reply,
        trace: ResponseTrace {
            exchange,
            template: cfg.template.to_string(),
            similarity: prepared.similarity,
            alpha: cfg.alpha,
            gate_open: prepared.retrieval.is_some(),
            question_id: prepared.retrieval.map(|r| r.question_id),
            entities_used: prepared.entities_used,
            placeholders: prepared.placeholders,
            entity_update,
            entity_update_error,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use crate::knowledge_base::QAPair;
    use crate::llm::{ChatMessage, ScriptedLlm};

    fn pair(qid: &str, title: &str, answer: &str, up: u64, views: u64) -> QAPair {
        QAPair {
            question_id: qid.into(),
            question_title: title.into(),
            question_text: String::new(),
            topic: "work".into(),
            therapist_info: String::new(),
            answer_text: answer.into(),
            upvotes: up,
            views,
        }
    }

    fn engine(llm: Arc<dyn LlmProvider>) -> Engine {
        let emb = Arc::new(HashingEmbedder::default());
        let kb = KnowledgeBase::from_pairs(
            vec![pair("q1", "difficult coworker at the office", "Try naming what bothers you. Then talk.", 5, 10)],
            emb.as_ref(),
        )
        .unwrap();
        Engine::new(emb, llm).with_kb(Arc::new(kb)).with_clock(Clock::logical())
    }

    #[test]
    fn first_message_has_no_entity_block_and_window_of_two() {
        let llm = Arc::new(ScriptedLlm::rules());
        let e = engine(llm.clone());
        let mut s = Session::new("s1", SessionConfig::default()).unwrap();
        let r = respond(&e, &mut s, "I met Derek on Tuesday").unwrap();
        assert!(!llm.payloads()[0][0].content.contains("Known context"));
        assert_eq!(s.buffer.len(), 2);
        assert_eq!(s.full_log[0].role, TurnRole::User);
        assert!(!s.full_log[0].content.contains("Derek"));
        assert_eq!(r.trace.exchange, 1);
        assert_eq!(r.trace.placeholders.len(), 2);
        assert_eq!(s.history_restored(1).len(), 1);
        assert_eq!(s.history_restored(10)[0].content, "I met Derek on Tuesday");
    }

    #[test]
    fn unrelated_query_closes_the_gate() {
        let llm = Arc::new(ScriptedLlm::rules());
        let e = engine(llm.clone());
        let mut s = Session::new("s1", SessionConfig::default()).unwrap();
        let r = respond(&e, &mut s, "zebra quantum").unwrap();
        assert!(!r.trace.gate_open);
        assert!(r.trace.similarity.unwrap() < 0.2);
        assert!(!llm.payloads()[0][0].content.contains("Question:"));

        let r = respond(&e, &mut s, "difficult coworker at the office").unwrap();
        assert!(r.trace.gate_open);
        assert_eq!(r.trace.question_id.as_deref(), Some("q1"));
        assert!(llm.payloads()[1][0].content.contains("Answer: Try naming"));
    }

    #[test]
    fn failure_rolls_back_everything() {
        let llm = Arc::new(ScriptedLlm::canned(["fine"]));
        let e = engine(llm);
        let mut s = Session::new("s1", SessionConfig::default()).unwrap();
        respond(&e, &mut s, "hello").unwrap();
        let before = serde_json::to_string(&s).unwrap();
        let err = respond(&e, &mut s, "I saw Derek in Paris").unwrap_err();
        assert_eq!(err.stage, Stage::Complete);
        assert_eq!(serde_json::to_string(&s).unwrap(), before);
    }

    #[test]
    fn derek_summary_reaches_the_reply() {
        let llm = Arc::new(ScriptedLlm::rules());
        let e = engine(llm.clone());
        let cfg = SessionConfig { update_every: 2, ..Default::default() };
        let mut s = Session::new("s1", cfg).unwrap();
        respond(&e, &mut s, "Derek is a co-worker who keeps criticizing my reports.").unwrap();
        let r = respond(&e, &mut s, "I feel tense around Derek.").unwrap();
        assert!(r.trace.entity_update.as_ref().is_some_and(|u| u.len() == 1));
        let views = s.entity_views();
        assert_eq!(views.len(), 1);
        assert_eq!(views[0].display_name, "Derek");

        let r = respond(&e, &mut s, "I have a meeting with Derek today").unwrap();
        assert_eq!(r.trace.entities_used.len(), 1);
        assert!(r.reply.contains("Derek"), "{}", r.reply);
        assert!(r.reply.contains("criticizing"), "{}", r.reply);
        for payload in llm.payloads() {
            check_outbound(&payload, &s.anonymization_map).unwrap();
            assert!(payload.iter().all(|m: &ChatMessage| !m.content.contains("Derek")));
        }
    }

    #[test]
    fn memory_flags_strip_context() {
        let llm = Arc::new(ScriptedLlm::rules());
        let e = engine(llm.clone());
        let cfg = SessionConfig { short_term: false, long_term: false, ..Default::default() };
        let mut s = Session::new("s1", cfg).unwrap();
        respond(&e, &mut s, "Derek is my brother.").unwrap();
        respond(&e, &mut s, "Derek again").unwrap();
        assert_eq!(llm.payloads()[1].len(), 2);
        assert!(s.entity_store.is_empty());
    }
}
