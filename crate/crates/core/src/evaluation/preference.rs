use crate::embedding::excerpt;
use serde::{Deserialize, Serialize};
use std::time::Duration;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScorerError {
    #[error("scorer returned a non-finite logit")]
    NonFinite,
    #[error("scorer request failed (status {status:?}): {excerpt}")]
    Remote { status: Option<u16>, excerpt: String },
}

/// Scores two responses to the same question: `(logit_a, logit_b)`.
pub trait PairwiseScorer: Send + Sync {
    fn score(&self, question: &str, response_a: &str, response_b: &str) -> Result<(f64, f64), ScorerError>;
}

/// Offline stand-in: longer answers score higher on a log scale, and the
/// first slot gets a fixed bonus so the reversal protocol has a bias to cancel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthHeuristicScorer {
    pub position_bias: f64,
}

impl Default for LengthHeuristicScorer {
    fn default() -> Self {
        Self { position_bias: 0.1 }
    }
}

impl PairwiseScorer for LengthHeuristicScorer {
    fn score(&self, _question: &str, a: &str, b: &str) -> Result<(f64, f64), ScorerError> {
        let la = (a.split_whitespace().count() as f64).ln_1p();
        let lb = (b.split_whitespace().count() as f64).ln_1p();
        let total = la + lb;
        let (sa, sb) = if total == 0.0 { (0.5, 0.5) } else { (la / total, lb / total) };
        Ok((sa + self.position_bias, sb))
    }
}

/// Client for a scorer exposed as `POST {base}/compare`.
pub struct RemoteScorer {
    base_url: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompareRequest<'a> {
    question: &'a str,
    response_a: &'a str,
    response_b: &'a str,
}

#[derive(Deserialize)]
struct CompareResponse {
    logit_a: f64,
    logit_b: f64,
}

impl RemoteScorer {
    pub fn new(base_url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
        }
    }

    /// Reads `SCORER_BASE_URL`.
    pub fn from_env() -> Option<Self> {
        std::env::var("SCORER_BASE_URL").ok().map(Self::new)
    }
}

impl PairwiseScorer for RemoteScorer {
    fn score(&self, question: &str, a: &str, b: &str) -> Result<(f64, f64), ScorerError> {
        let url = format!("{}/compare", self.base_url);
        let mut resp = self
            .agent
            .post(&url)
            .send_json(CompareRequest { question, response_a: a, response_b: b })
            .map_err(|e| ScorerError::Remote { status: None, excerpt: excerpt(&e.to_string()) })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().unwrap_or_default();
        if !(200..300).contains(&status) {
            return Err(ScorerError::Remote { status: Some(status), excerpt: excerpt(&body) });
        }
        let parsed: CompareResponse = serde_json::from_str(&body)
            .map_err(|e| ScorerError::Remote { status: Some(status), excerpt: excerpt(&e.to_string()) })?;
        Ok((parsed.logit_a, parsed.logit_b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Comparison {
    /// 1 or 2, naming the argument position of the preferred response.
    pub winner: u8,
    pub avg_logits: (f64, f64),
    pub tie: bool,
}

/// Scores the pair in both orders and averages the logits each response
/// received, which cancels any preference for a slot. Ties go to `r1`.
pub fn compare_with_reversal(
    scorer: &dyn PairwiseScorer,
    question: &str,
    r1: &str,
    r2: &str,
) -> Result<Comparison, ScorerError> {
    let (a1, b1) = scorer.score(question, r1, r2)?;
    let (a2, b2) = scorer.score(question, r2, r1)?;
    if ![a1, b1, a2, b2].iter().all(|v| v.is_finite()) {
        return Err(ScorerError::NonFinite);
    }
    let avg = ((a1 + b2) / 2.0, (b1 + a2) / 2.0);
    let tie = avg.0 == avg.1;
    Ok(Comparison {
        winner: if avg.0 >= avg.1 { 1 } else { 2 },
        avg_logits: avg,
        tie,
    })
}
