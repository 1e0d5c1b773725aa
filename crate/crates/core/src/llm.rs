//! Chat-completion providers: an OpenAI-compatible HTTP client and a
//! deterministic scripted mock.

use crate::embedding::{excerpt, tokenize};
use crate::memory::{Turn, TurnRole};
use crate::privacy::{find_leaks, AnonymizationMap};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo-1106";
const MAX_ATTEMPTS: u32 = 3;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LlmError {
    #[error("remote completion failed (status {status:?}): {excerpt}")]
    Remote { status: Option<u16>, excerpt: String },
    #[error("scripted provider exhausted after {served} replies")]
    ScriptExhausted { served: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider returned an empty reply")]
    EmptyReply,
    #[error("outbound payload contains original PII: {0:?}")]
    PrivacyViolation(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

impl From<&Turn> for ChatMessage {
    fn from(t: &Turn) -> Self {
        match t.role {
            TurnRole::User => ChatMessage::user(t.content.clone()),
            TurnRole::Assistant => ChatMessage::assistant(t.content.clone()),
        }
    }
}

pub trait LlmProvider: Send + Sync {
    fn model(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
}

/// Validates the request shape and runs the provider.
pub fn complete(messages: &[ChatMessage], provider: &dyn LlmProvider) -> Result<String, LlmError> {
    check_request(messages)?;
    let reply = provider.complete(messages)?;
    if reply.trim().is_empty() {
        return Err(LlmError::EmptyReply);
    }
    Ok(reply)
}

fn check_request(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.last() {
        None => Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role == Role::Assistant => Err(LlmError::InvalidRequest(
            "last message must be from the user or system".into(),
        )),
        Some(_) => Ok(()),
    }
}

/// Rejects a payload if any original surface from `map` appears in it.
pub fn check_outbound(messages: &[ChatMessage], map: &AnonymizationMap) -> Result<(), LlmError> {
    let mut leaks: Vec<String> = Vec::new();
    for m in messages {
        for leak in find_leaks(&m.content, map) {
            if !leaks.contains(&leak) {
                leaks.push(leak);
            }
        }
    }
    if leaks.is_empty() {
        Ok(())
    } else {
        Err(LlmError::PrivacyViolation(leaks))
    }
}

// ---------------------------------------------------------------------------
// Remote

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

/// OpenAI-compatible `/chat/completions` client with bounded retries.
pub struct RemoteLlm {
    base_url: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
    backoff: Duration,
    agent: ureq::Agent,
}

impl RemoteLlm {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: model.into(),
            temperature: 0.0,
            api_key: None,
            backoff: Duration::from_millis(250),
            agent,
        }
    }

    /// `LLM_BASE_URL` (default `https://api.openai.com/v1`) and `LLM_API_KEY`.
    pub fn from_env(model: impl Into<String>) -> Self {
        let base = std::env::var("LLM_BASE_URL")
            .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        let mut llm = Self::new(base, model);
        llm.api_key = std::env::var("LLM_API_KEY").ok();
        llm
    }

    pub fn with_api_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        assert!(temperature >= 0.0, "temperature must be non-negative");
        self.temperature = temperature;
        self
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn attempt(&self, messages: &[ChatMessage]) -> Result<String, (bool, LlmError)> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(CompletionRequest {
                model: &self.model,
                messages,
                temperature: self.temperature,
            })
            .map_err(|e| {
                (
                    true,
                    LlmError::Remote { status: None, excerpt: e.to_string() },
                )
            })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| {
            (
                true,
                LlmError::Remote { status: Some(status), excerpt: e.to_string() },
            )
        })?;
        if !(200..300).contains(&status) {
            let transient = status == 429 || status >= 500;
            return Err((
                transient,
                LlmError::Remote { status: Some(status), excerpt: excerpt(&body) },
            ));
        }
        let parsed: CompletionResponse = serde_json::from_str(&body).map_err(|e| {
            (
                false,
                LlmError::Remote {
                    status: Some(status),
                    excerpt: format!("{e}: {}", excerpt(&body)),
                },
            )
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .filter(|c| !c.trim().is_empty())
            .ok_or((false, LlmError::EmptyReply))
    }
}

impl LlmProvider for RemoteLlm {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        let mut last = None;
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.pow(attempt - 1));
            }
            match self.attempt(messages) {
                Ok(reply) => return Ok(reply),
                Err((true, e)) => {
                    tracing::warn!(attempt, error = %e, "transient completion failure");
                    last = Some(e);
                }
                Err((false, e)) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

// ---------------------------------------------------------------------------
// Scripted mock

enum Script {
    Canned(Vec<String>),
    Rules,
}

/// Deterministic provider for tests and offline runs.
///
/// `canned` replays a fixed list of replies and then fails with
/// [`LlmError::ScriptExhausted`]. `rules` answers from the prompt itself:
/// summarization requests echo the existing summary unless the recent user
/// turns carry tokens the summary lacks, and chat requests echo every
/// `Known context:` line plus the first retrieved therapist answer.
pub struct ScriptedLlm {
    script: Script,
    served: Mutex<usize>,
    log: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedLlm {
    pub fn canned<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Script::Canned(replies.into_iter().map(Into::into).collect()),
            served: Mutex::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn rules() -> Self {
        Self {
            script: Script::Rules,
            served: Mutex::new(0),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Number of completion calls received, including failed ones.
    pub fn calls(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    /// Every payload received so far, in order.
    pub fn payloads(&self) -> Vec<Vec<ChatMessage>> {
        self.log.lock().unwrap().clone()
    }
}

impl LlmProvider for ScriptedLlm {
    fn model(&self) -> &str {
        "scripted"
    }

    fn complete(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        self.log.lock().unwrap().push(messages.to_vec());
        let mut served = self.served.lock().unwrap();
        let reply = match &self.script {
            Script::Canned(replies) => replies
                .get(*served)
                .cloned()
                .ok_or(LlmError::ScriptExhausted { served: *served })?,
            Script::Rules => rule_reply(messages),
        };
        *served += 1;
        Ok(reply)
    }
}

fn rule_reply(messages: &[ChatMessage]) -> String {
    let last = messages.last().map(|m| m.content.as_str()).unwrap_or("");
    if let Some(req) = SummaryRequest::parse(last) {
        return req.echo_summary();
    }
    let system = messages
        .iter()
        .find(|m| m.role == Role::System)
        .map(|m| m.content.as_str())
        .unwrap_or("");
    let mut parts = vec!["Thank you for telling me about this.".to_string()];
    for line in system.lines() {
        if let Some(rest) = line.strip_prefix("Known context: ") {
            if let Some((_, summary)) = rest.split_once(": ") {
                parts.push(format!("I remember that {}", summary.trim()));
            }
        }
    }
    if let Some(answer) = system
        .lines()
        .find_map(|l| l.strip_prefix("Answer: "))
        .and_then(|a| first_sentence(a))
    {
        parts.push(format!("A therapist once put it this way: {answer}"));
    }
    parts.push("What feels most important to talk about right now?".to_string());
    parts.join(" ")
}

fn first_sentence(text: &str) -> Option<String> {
    let s = split_sentences(text).into_iter().next()?;
    Some(s)
}

fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
            let s = current.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            current.clear();
        }
    }
    let s = current.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

// ---------------------------------------------------------------------------
// Entity summarization

const DEFAULT_SUMMARY_PROMPT: &str = include_str!("../resources/prompts/entity_summary.txt");

/// Instruction used to refresh an entity summary. Slots: `{entity}`,
/// `{summary}`, `{history}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPrompt {
    template: String,
}

impl Default for SummaryPrompt {
    fn default() -> Self {
        Self { template: DEFAULT_SUMMARY_PROMPT.trim_end().to_string() }
    }
}

impl SummaryPrompt {
    pub fn new(template: impl Into<String>) -> Self {
        Self { template: template.into() }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(std::fs::read_to_string(path)?.trim_end().to_string()))
    }

    pub fn render(&self, entity: &str, summary: &str, history: &[Turn]) -> String {
        self.template
            .replace("{entity}", entity)
            .replace("{summary}", summary)
            .replace("{history}", &render_history(history))
    }
}

pub fn render_history(history: &[Turn]) -> String {
    history
        .iter()
        .map(|t| format!("{}: {}", t.role.label(), t.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Asks the model to refresh `existing_summary` given recent turns; the model
/// is told to return the summary unchanged when nothing new was said.
pub fn summarize_entity(
    entity: &str,
    existing_summary: &str,
    history: &[Turn],
    provider: &dyn LlmProvider,
    prompt: &SummaryPrompt,
) -> Result<String, LlmError> {
    if entity.trim().is_empty() {
        return Err(LlmError::InvalidRequest("empty entity key".into()));
    }
    let messages = [ChatMessage::user(prompt.render(entity, existing_summary, history))];
    complete(&messages, provider).map(|s| s.trim().to_string())
}

/// Fields recovered from a rendered default summary prompt (mock side).
struct SummaryRequest {
    entity: String,
    summary: String,
    history: String,
}

impl SummaryRequest {
    const HEAD: &'static str = "You maintain a factual summary of ";
    const SUMMARY: &'static str = ". Existing summary: ";
    const HISTORY: &'static str = ". Recent conversation: ";
    const TAIL: &'static str = ". Update only if new information is present";

    fn parse(prompt: &str) -> Option<Self> {
        let rest = prompt.strip_prefix(Self::HEAD)?;
        let (entity, rest) = rest.split_once(Self::SUMMARY)?;
        let (summary, rest) = rest.split_once(Self::HISTORY)?;
        let end = rest.rfind(Self::TAIL)?;
        Some(Self {
            entity: entity.to_string(),
            summary: summary.to_string(),
            history: rest[..end].to_string(),
        })
    }

    fn echo_summary(&self) -> String {
        let entity_tokens = tokenize(&self.entity);
        let known: HashSet<String> = tokenize(&self.summary).into_iter().collect();
        let mut fresh: Vec<String> = Vec::new();
        for line in self.history.lines() {
            let Some(text) = line.strip_prefix("User: ") else {
                continue;
            };
            for sentence in split_sentences(text) {
                let toks = tokenize(&sentence);
                let mentions = toks
                    .windows(entity_tokens.len().max(1))
                    .any(|w| w == entity_tokens.as_slice());
                if mentions && toks.iter().any(|t| !known.contains(t)) && !fresh.contains(&sentence)
                {
                    fresh.push(sentence);
                }
            }
        }
        match (self.summary.trim().is_empty(), fresh.is_empty()) {
            (true, true) => format!("summarize:{}", self.entity),
            (true, false) => fresh.join(" "),
            (false, true) => self.summary.clone(),
            (false, false) => format!("{} {}", self.summary.trim(), fresh.join(" ")),
        }
    }
}
