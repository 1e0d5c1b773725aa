//! PII detection, kind-preserving anonymization and restoration.
//!
//! User text is scanned by a [`PiiDetector`], every detected surface is swapped
//! for a surrogate drawn from a kind-specific pool, and the pairing is kept in a
//! session-scoped [`AnonymizationMap`]. Anything leaving the process carries
//! surrogates only; [`restore`] maps them back on the way out to the user.

mod detector;
mod map;

pub use detector::{ExternalNerDetector, Gazetteer, RawSpan, RuleBasedDetector};
pub use map::{AnonymizationMap, MapEntry, SurrogatePools};

use regex::Regex;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Retry budget for drawing a surrogate that does not collide with the text.
pub const MAX_SURROGATE_ATTEMPTS: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PrivacyError {
    #[error("span {start}..{end} is out of bounds or not on a char boundary")]
    InvalidSpan { start: usize, end: usize },
    #[error("span surface {surface:?} does not match text[{start}..{end}]")]
    SurfaceMismatch {
        start: usize,
        end: usize,
        surface: String,
    },
    #[error("spans {first:?} and {second:?} overlap")]
    OverlappingSpans {
        first: (usize, usize),
        second: (usize, usize),
    },
    #[error("no collision-free surrogate for {surface:?} after {attempts} attempts")]
    PlaceholderCollision { surface: String, attempts: usize },
    #[error("external NER backend failed: {0}")]
    Backend(String),
    #[error("gazetteer line {line}: {message}")]
    GazetteerParse { line: usize, message: String },
    #[error("io error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiiKind {
    Person,
    Location,
    #[serde(rename = "datetime")]
    DateTime,
    Other,
}

impl PiiKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PiiKind::Person => "person",
            PiiKind::Location => "location",
            PiiKind::DateTime => "datetime",
            PiiKind::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "person" | "per" => Some(PiiKind::Person),
            "location" | "loc" | "gpe" => Some(PiiKind::Location),
            "datetime" | "date" | "time" => Some(PiiKind::DateTime),
            "other" => Some(PiiKind::Other),
            _ => None,
        }
    }
}

impl fmt::Display for PiiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A detected PII occurrence. Offsets are byte offsets into the scanned text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiiSpan {
    pub start: usize,
    pub end: usize,
    pub kind: PiiKind,
    pub surface: String,
}

impl PiiSpan {
    pub fn new(start: usize, end: usize, kind: PiiKind, surface: impl Into<String>) -> Self {
        Self {
            start,
            end,
            kind,
            surface: surface.into(),
        }
    }
}

/// Anything that can locate PII in a piece of text.
///
/// Implementations must be deterministic for a fixed input and configuration.
pub trait PiiDetector: Send + Sync {
    fn detect(&self, text: &str) -> Result<Vec<PiiSpan>, PrivacyError>;
}

/// Runs `detector` and enforces the span contract (in bounds, surface matches
/// the slice, sorted, non-overlapping).
pub fn detect_pii(text: &str, detector: &dyn PiiDetector) -> Result<Vec<PiiSpan>, PrivacyError> {
    let spans = detector.detect(text)?;
    validate_spans(text, &spans)?;
    Ok(spans)
}

pub fn validate_spans(text: &str, spans: &[PiiSpan]) -> Result<(), PrivacyError> {
    let mut prev: Option<&PiiSpan> = None;
    for span in spans {
        if span.start >= span.end
            || span.end > text.len()
            || !text.is_char_boundary(span.start)
            || !text.is_char_boundary(span.end)
        {
            return Err(PrivacyError::InvalidSpan {
                start: span.start,
                end: span.end,
            });
        }
        if text[span.start..span.end] != span.surface {
            return Err(PrivacyError::SurfaceMismatch {
                start: span.start,
                end: span.end,
                surface: span.surface.clone(),
            });
        }
        if let Some(p) = prev {
            if span.start < p.end {
                return Err(PrivacyError::OverlappingSpans {
                    first: (p.start, p.end),
                    second: (span.start, span.end),
                });
            }
        }
        prev = Some(span);
    }
    Ok(())
}

/// Output of [`anonymize`]: the rewritten text plus the spans it now contains,
/// expressed in output coordinates with placeholder surfaces.
#[derive(Debug, Clone, PartialEq)]
pub struct Anonymized {
    pub text: String,
    pub spans: Vec<PiiSpan>,
}

/// Replaces every span with its session placeholder, drawing new surrogates as
/// needed. The map is only modified when the whole call succeeds.
pub fn anonymize(
    text: &str,
    spans: &[PiiSpan],
    map: &mut AnonymizationMap,
    pools: &SurrogatePools,
) -> Result<Anonymized, PrivacyError> {
    validate_spans(text, spans)?;
    if spans.is_empty() {
        return Ok(Anonymized {
            text: text.to_string(),
            spans: Vec::new(),
        });
    }

    let mut staged = map.clone();
    let mut out = String::with_capacity(text.len() + 16 * spans.len());
    let mut out_spans = Vec::with_capacity(spans.len());
    let mut cursor = 0;
    for span in spans {
        let placeholder = staged.placeholder_for(&span.surface, span.kind, text, pools)?;
        out.push_str(&text[cursor..span.start]);
        let start = out.len();
        out.push_str(&placeholder);
        out_spans.push(PiiSpan::new(start, out.len(), span.kind, placeholder));
        cursor = span.end;
    }
    out.push_str(&text[cursor..]);
    *map = staged;
    Ok(Anonymized {
        text: out,
        spans: out_spans,
    })
}

/// Puts original surfaces back in place of placeholders. Placeholders are
/// matched exactly and longest-first, so one placeholder that is a prefix of
/// another can never split it.
pub fn restore(text: &str, map: &AnonymizationMap) -> String {
    let mut placeholders: Vec<&MapEntry> = map.entries().iter().collect();
    if placeholders.is_empty() {
        return text.to_string();
    }
    placeholders.sort_by(|a, b| {
        b.placeholder
            .len()
            .cmp(&a.placeholder.len())
            .then_with(|| a.placeholder.cmp(&b.placeholder))
    });
    let pattern = placeholders
        .iter()
        .map(|e| regex::escape(&e.placeholder))
        .collect::<Vec<_>>()
        .join("|");
    let re = Regex::new(&pattern).expect("escaped alternation is a valid regex");
    re.replace_all(text, |caps: &regex::Captures<'_>| {
        let hit = caps.get(0).map(|m| m.as_str()).unwrap_or_default();
        map.original_of(hit).unwrap_or(hit).to_string()
    })
    .into_owned()
}

/// Rewrites whole-token occurrences of known original surfaces into their
/// placeholders. Used on text the model produced itself (assistant turns,
/// retrieved corpus answers) before it is sent out again. Originals that are
/// also live placeholders are left alone; rewriting them would corrupt the
/// surrogate they already stand for.
pub fn mask_known(text: &str, map: &AnonymizationMap) -> String {
    let mut entries: Vec<&MapEntry> = map.entries().iter().filter(|e| !map.is_ambiguous(&e.original)).collect();
    if entries.is_empty() {
        return text.to_string();
    }
    entries.sort_by(|a, b| b.original.len().cmp(&a.original.len()));
    let pattern = entries
        .iter()
        .map(|e| regex::escape(&e.original))
        .collect::<Vec<_>>()
        .join("|");
    let re = Regex::new(&format!(r"\b(?:{pattern})\b")).expect("valid alternation");
    re.replace_all(text, |caps: &regex::Captures<'_>| {
        let hit = caps.get(0).map(|m| m.as_str()).unwrap_or_default();
        entries
            .iter()
            .find(|e| e.original == hit)
            .map(|e| e.placeholder.clone())
            .unwrap_or_else(|| hit.to_string())
    })
    .into_owned()
}

/// Original surfaces from `map` that occur as standalone tokens in `payload`.
/// An original that is also another entry's placeholder is not reported: in
/// anonymized text it stands for that other entry.
pub fn find_leaks(payload: &str, map: &AnonymizationMap) -> Vec<String> {
    let mut leaks: Vec<String> = Vec::new();
    for entry in map.entries() {
        if map.is_ambiguous(&entry.original) {
            continue;
        }
        if contains_token(payload, &entry.original) && !leaks.contains(&entry.original) {
            leaks.push(entry.original.clone());
        }
    }
    leaks
}

pub(crate) fn contains_token(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    haystack.match_indices(needle).any(|(i, m)| {
        let before = haystack[..i].chars().next_back();
        let after = haystack[i + m.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}
