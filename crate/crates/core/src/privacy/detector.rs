use super::{validate_spans, PiiDetector, PiiKind, PiiSpan, PrivacyError};
use regex::Regex;
use std::path::Path;

const BUILTIN_GAZETTEER: &str = include_str!("../../resources/gazetteer.tsv");

/// Known surfaces per kind, loaded from `kind<TAB>surface` lines.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: Vec<(PiiKind, String)>,
}

impl Gazetteer {
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_GAZETTEER).expect("shipped gazetteer parses")
    }

    pub fn from_entries<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (PiiKind, S)>,
        S: Into<String>,
    {
        Self {
            entries: entries.into_iter().map(|(k, s)| (k, s.into())).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PrivacyError> {
        let raw = std::fs::read_to_string(path).map_err(|e| PrivacyError::Io(e.to_string()))?;
        Self::parse(&raw)
    }

    /// Blank lines and `#` comments are skipped.
    pub fn parse(raw: &str) -> Result<Self, PrivacyError> {
        parse_kind_table(raw).map(|entries| Self { entries })
    }

    pub fn entries(&self) -> &[(PiiKind, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub(crate) fn parse_kind_table(raw: &str) -> Result<Vec<(PiiKind, String)>, PrivacyError> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (kind, surface) = line.split_once('\t').ok_or(PrivacyError::GazetteerParse {
            line: line_no,
            message: "expected kind<TAB>surface".into(),
        })?;
        let kind = PiiKind::parse(kind).ok_or_else(|| PrivacyError::GazetteerParse {
            line: line_no,
            message: format!("unknown kind {kind:?}"),
        })?;
        let surface = surface.trim();
        if surface.is_empty() {
            return Err(PrivacyError::GazetteerParse {
                line: line_no,
                message: "empty surface".into(),
            });
        }
        out.push((kind, surface.to_string()));
    }
    Ok(out)
}

const WEEKDAY: &str = r"\b(?:Monday|Tuesday|Wednesday|Thursday|Friday|Saturday|Sunday)s?\b";
const MONTH: &str =
    "(?:January|February|March|April|May|June|July|August|September|October|November|December)";

/// Offline default detector: gazetteer lookups plus regexes for dates,
/// weekdays, street addresses, e-mail addresses and phone numbers.
#[derive(Debug, Clone)]
pub struct RuleBasedDetector {
    rules: Vec<(PiiKind, Regex)>,
}

impl RuleBasedDetector {
    pub fn new(gazetteer: Gazetteer) -> Self {
        let mut rules = Vec::new();
        for kind in [
            PiiKind::Person,
            PiiKind::Location,
            PiiKind::DateTime,
            PiiKind::Other,
        ] {
            let mut surfaces: Vec<&str> = gazetteer
                .entries
                .iter()
                .filter(|(k, _)| *k == kind)
                .map(|(_, s)| s.as_str())
                .collect();
            if surfaces.is_empty() {
                continue;
            }
            surfaces.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
            surfaces.dedup();
            let alternation = surfaces
                .iter()
                .map(|s| regex::escape(s))
                .collect::<Vec<_>>()
                .join("|");
            rules.push((
                kind,
                Regex::new(&format!(r"\b(?:{alternation})\b")).expect("gazetteer regex"),
            ));
        }

        let patterns: [(PiiKind, String); 7] = [
            (PiiKind::DateTime, WEEKDAY.to_string()),
            (
                PiiKind::DateTime,
                format!(r"\b{MONTH} \d{{1,2}}(?:st|nd|rd|th)?(?:, \d{{4}})?\b"),
            ),
            (
                PiiKind::DateTime,
                format!(r"\b\d{{1,2}}(?:st|nd|rd|th)? (?:of )?{MONTH}(?: \d{{4}})?\b"),
            ),
            (
                PiiKind::DateTime,
                r"\b(?:\d{4}-\d{2}-\d{2}|\d{1,2}/\d{1,2}/\d{2,4})\b".to_string(),
            ),
            (
                PiiKind::Location,
                r"\b\d{1,5} [A-Z][a-z]+(?: [A-Z][a-z]+)? (?:Street|St|Avenue|Ave|Road|Rd|Boulevard|Blvd|Lane|Ln|Drive|Dr)\b"
                    .to_string(),
            ),
            (
                PiiKind::Other,
                r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b".to_string(),
            ),
            (
                PiiKind::Other,
                r"\b\d{3}[-. ]\d{3}[-. ]\d{4}\b".to_string(),
            ),
        ];
        for (kind, pattern) in patterns {
            rules.push((kind, Regex::new(&pattern).expect("builtin pattern")));
        }
        Self { rules }
    }

    pub fn builtin() -> Self {
        Self::new(Gazetteer::builtin())
    }
}

impl PiiDetector for RuleBasedDetector {
    fn detect(&self, text: &str) -> Result<Vec<PiiSpan>, PrivacyError> {
        let mut hits: Vec<PiiSpan> = Vec::new();
        for (kind, re) in &self.rules {
            for m in re.find_iter(text) {
                hits.push(PiiSpan::new(m.start(), m.end(), *kind, m.as_str()));
            }
        }
        Ok(resolve_overlaps(hits))
    }
}

/// Greedy left-to-right selection: earliest start wins, longer match breaks ties.
fn resolve_overlaps(mut hits: Vec<PiiSpan>) -> Vec<PiiSpan> {
    hits.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut out: Vec<PiiSpan> = Vec::with_capacity(hits.len());
    for hit in hits {
        if out.last().is_none_or(|last| hit.start >= last.end) {
            out.push(hit);
        }
    }
    out
}

/// A span as reported by a third-party NER backend, before validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpan {
    pub start: usize,
    pub end: usize,
    pub label: String,
}

/// Adapter slot for an external NER service. The backend is any function that
/// returns labelled byte ranges; labels are mapped onto [`PiiKind`] and
/// unknown labels are dropped. Overlapping output is rejected, not repaired.
pub struct ExternalNerDetector<F> {
    backend: F,
}

impl<F> ExternalNerDetector<F>
where
    F: Fn(&str) -> Result<Vec<RawSpan>, String> + Send + Sync,
{
    pub fn new(backend: F) -> Self {
        Self { backend }
    }
}

impl<F> PiiDetector for ExternalNerDetector<F>
where
    F: Fn(&str) -> Result<Vec<RawSpan>, String> + Send + Sync,
{
    fn detect(&self, text: &str) -> Result<Vec<PiiSpan>, PrivacyError> {
        let raw = (self.backend)(text).map_err(PrivacyError::Backend)?;
        let mut spans = Vec::with_capacity(raw.len());
        for r in raw {
            let Some(kind) = PiiKind::parse(&r.label) else {
                continue;
            };
            let surface = text
                .get(r.start..r.end)
                .ok_or(PrivacyError::InvalidSpan {
                    start: r.start,
                    end: r.end,
                })?;
            spans.push(PiiSpan::new(r.start, r.end, kind, surface));
        }
        spans.sort_by_key(|s| (s.start, s.end));
        validate_spans(text, &spans)?;
        Ok(spans)
    }
}
