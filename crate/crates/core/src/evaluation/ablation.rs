//! Long-term memory ablation over scripted past conversations.

use super::text_metrics::{relevance, MetricError};
use crate::embedding::EmbeddingProvider;
use crate::memory::TurnRole;
use crate::rag::{respond, Engine, PipelineError, Session, SessionConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum AblationError {
    #[error("scenario file: {0}")]
    ScenarioParse(String),
    #[error("scenario {index} ({topic}): {source}")]
    Engine {
        index: usize,
        topic: String,
        #[source]
        source: PipelineError,
    },
    #[error("scenario {index}: {source}")]
    Metric {
        index: usize,
        #[source]
        source: MetricError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTurn {
    pub role: String,
    pub content: String,
}

impl ScenarioTurn {
    pub fn turn_role(&self) -> Option<TurnRole> {
        match self.role.to_ascii_lowercase().as_str() {
            "user" => Some(TurnRole::User),
            "assistant" | "therapist" => Some(TurnRole::Assistant),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioCase {
    pub topic: String,
    pub past_conversation: Vec<ScenarioTurn>,
    pub user_query: String,
    pub key_information: String,
    pub sample_answer: String,
}

impl ScenarioCase {
    fn validate(&self, index: usize) -> Result<(), AblationError> {
        let bad = |m: String| AblationError::ScenarioParse(format!("scenario {index}: {m}"));
        for (name, v) in [
            ("topic", &self.topic),
            ("user_query", &self.user_query),
            ("key_information", &self.key_information),
            ("sample_answer", &self.sample_answer),
        ] {
            if v.trim().is_empty() {
                return Err(bad(format!("{name} is empty")));
            }
        }
        if self.past_conversation.is_empty() {
            return Err(bad("past_conversation is empty".into()));
        }
        let mut prev: Option<TurnRole> = None;
        for (i, t) in self.past_conversation.iter().enumerate() {
            let role = t.turn_role().ok_or_else(|| bad(format!("turn {i}: unknown role {:?}", t.role)))?;
            if prev == Some(role) {
                return Err(bad(format!("turn {i}: roles must alternate")));
            }
            if t.content.trim().is_empty() {
                return Err(bad(format!("turn {i}: empty content")));
            }
            prev = Some(role);
        }
        Ok(())
    }
}

pub fn parse_scenarios(raw: &str) -> Result<Vec<ScenarioCase>, AblationError> {
    let cases: Vec<ScenarioCase> = serde_json::from_str(raw).map_err(|e| AblationError::ScenarioParse(e.to_string()))?;
    if cases.is_empty() {
        return Err(AblationError::ScenarioParse("no scenarios".into()));
    }
    for (i, c) in cases.iter().enumerate() {
        c.validate(i)?;
    }
    Ok(cases)
}

pub fn load_scenarios(path: &Path) -> Result<Vec<ScenarioCase>, AblationError> {
    let raw = std::fs::read_to_string(path).map_err(|e| AblationError::ScenarioParse(format!("{}: {e}", path.display())))?;
    parse_scenarios(&raw)
}

pub fn builtin_scenarios() -> Vec<ScenarioCase> {
    parse_scenarios(include_str!("../../resources/scenarios.json")).expect("shipped scenarios parse")
}

/// An engine plus the memory switches it runs with.
#[derive(Clone)]
pub struct AblationArm {
    pub engine: Engine,
    pub config: SessionConfig,
}

impl AblationArm {
    /// Long-term memory on, short-term window off.
    pub fn memory(engine: Engine, base: SessionConfig) -> Self {
        Self {
            engine,
            config: SessionConfig { short_term: false, long_term: true, ..base },
        }
    }

    /// Both memories off.
    pub fn baseline(engine: Engine, base: SessionConfig) -> Self {
        Self {
            engine,
            config: SessionConfig { short_term: false, long_term: false, ..base },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmScore {
    /// Relevance of the reply to the scenario's sample answer.
    pub sample_answer: f64,
    /// Relevance of the reply to the key information.
    pub key_information: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioScore {
    pub topic: String,
    pub memory: ArmScore,
    pub baseline: ArmScore,
    pub memory_reply: String,
    pub baseline_reply: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub scenarios: Vec<ScenarioScore>,
    pub mean_memory: ArmScore,
    pub mean_baseline: ArmScore,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28} {:>10} {:>10} {:>10} {:>10}", "topic", "mem/ans", "mem/key", "base/ans", "base/key");
        for s in &self.scenarios {
            let topic: String = s.topic.chars().take(28).collect();
            let _ = writeln!(
                out,
                "{:<28} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
                topic, s.memory.sample_answer, s.memory.key_information, s.baseline.sample_answer, s.baseline.key_information
            );
        }
        let _ = writeln!(
            out,
            "{:<28} {:>10.4} {:>10.4} {:>10.4} {:>10.4}",
            "mean",
            self.mean_memory.sample_answer,
            self.mean_memory.key_information,
            self.mean_baseline.sample_answer,
            self.mean_baseline.key_information
        );
        out
    }
}

/// Replays the past conversation into a fresh session, summarizes the
/// entities it mentions when long-term memory is on, then asks the query.
fn run_arm(index: usize, case: &ScenarioCase, arm: &AblationArm) -> Result<String, AblationError> {
    let engine_err = |source| AblationError::Engine { index, topic: case.topic.clone(), source };
    let mut session = Session::new(format!("ablation-{index}"), arm.config.clone())
        .map_err(|e| AblationError::ScenarioParse(e.to_string()))?;
    for t in &case.past_conversation {
        let role = t.turn_role().expect("validated");
        session.ingest_turn(&arm.engine, role, &t.content).map_err(engine_err)?;
    }
    if arm.config.long_term {
        if let Err(e) = session.force_entity_update(&arm.engine) {
            tracing::warn!(scenario = index, error = %e, "entity summarization failed");
        }
    }
    Ok(respond(&arm.engine, &mut session, &case.user_query).map_err(engine_err)?.reply)
}

fn score(reply: &str, case: &ScenarioCase, provider: &dyn EmbeddingProvider, index: usize) -> Result<ArmScore, AblationError> {
    let m = |source| AblationError::Metric { index, source };
    Ok(ArmScore {
        sample_answer: relevance(reply, &case.sample_answer, provider).map_err(m)?,
        key_information: relevance(reply, &case.key_information, provider).map_err(m)?,
    })
}

fn mean_score(scores: &[ArmScore]) -> ArmScore {
    let n = scores.len().max(1) as f64;
    ArmScore {
        sample_answer: scores.iter().map(|s| s.sample_answer).sum::<f64>() / n,
        key_information: scores.iter().map(|s| s.key_information).sum::<f64>() / n,
    }
}

/// Scenarios run in parallel, each in its own sessions.
pub fn run_memory_ablation(
    scenarios: &[ScenarioCase],
    memory: &AblationArm,
    baseline: &AblationArm,
    provider: &dyn EmbeddingProvider,
) -> Result<AblationReport, AblationError> {
    if scenarios.is_empty() {
        return Err(AblationError::ScenarioParse("no scenarios".into()));
    }
    for (i, c) in scenarios.iter().enumerate() {
        c.validate(i)?;
    }
    let results: Vec<Result<ScenarioScore, AblationError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = scenarios
            .iter()
            .enumerate()
            .map(|(i, case)| {
                scope.spawn(move || {
                    let memory_reply = run_arm(i, case, memory)?;
                    let baseline_reply = run_arm(i, case, baseline)?;
                    Ok(ScenarioScore {
                        topic: case.topic.clone(),
                        memory: score(&memory_reply, case, provider, i)?,
                        baseline: score(&baseline_reply, case, provider, i)?,
                        memory_reply,
                        baseline_reply,
                    })
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("scenario thread panicked")).collect()
    });
    let scenarios: Vec<ScenarioScore> = results.into_iter().collect::<Result<_, _>>()?;
    let mem: Vec<ArmScore> = scenarios.iter().map(|s| s.memory).collect();
    let base: Vec<ArmScore> = scenarios.iter().map(|s| s.baseline).collect();
    Ok(AblationReport {
        mean_memory: mean_score(&mem),
        mean_baseline: mean_score(&base),
        scenarios,
    })
}
