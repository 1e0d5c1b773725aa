use crate::embedding::{cosine_similarity, tokenize, EmbeddingError, EmbeddingProvider};
use regex::Regex;
use serde::Serialize;
use std::collections::HashMap;
use std::path::Path;
use std::sync::LazyLock;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricError {
    #[error("text contains no words")]
    NoWords,
    #[error("text contains no sentences")]
    NoSentences,
    #[error("lexicon line {line}: {message}")]
    LexiconParse { line: usize, message: String },
    #[error("cannot read lexicon: {0}")]
    Io(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

static SENTENCE_END: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[.!?]+(?:\s+|$)").unwrap());

/// Whitespace-separated tokens with leading and trailing punctuation removed.
pub fn words(text: &str) -> Vec<&str> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|w| !w.is_empty())
        .collect()
}

/// Segments ended by `.`, `!` or `?` followed by whitespace or end of text,
/// plus a trailing unterminated segment. Segments without words don't count.
pub fn sentence_count(text: &str) -> usize {
    SENTENCE_END.split(text).filter(|s| !words(s).is_empty()).count()
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}

/// Vowel-group heuristic: one syllable per run of `aeiouy`, minus a silent
/// final `e` (but not in a consonant + `le` ending), never below one.
pub fn count_syllables(word: &str) -> usize {
    let w: Vec<char> = word.to_lowercase().chars().filter(|c| c.is_alphabetic()).collect();
    let mut groups = 0usize;
    let mut prev_vowel = false;
    for &c in &w {
        let v = is_vowel(c);
        if v && !prev_vowel {
            groups += 1;
        }
        prev_vowel = v;
    }
    let n = w.len();
    if n >= 2 && w[n - 1] == 'e' && !is_vowel(w[n - 2]) {
        let consonant_le = n >= 3 && w[n - 2] == 'l' && !is_vowel(w[n - 3]);
        if !consonant_le {
            groups = groups.saturating_sub(1);
        }
    }
    groups.max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Readability {
    pub raw: f64,
    /// `raw / 100`, not clamped.
    pub norm: f64,
}

pub fn flesch_reading_ease(text: &str) -> Result<Readability, MetricError> {
    let ws = words(text);
    if ws.is_empty() {
        return Err(MetricError::NoWords);
    }
    let sentences = sentence_count(text);
    if sentences == 0 {
        return Err(MetricError::NoSentences);
    }
    let syllables: usize = ws.iter().map(|w| count_syllables(w)).sum();
    let nw = ws.len() as f64;
    let raw = 206.835 - 1.015 * (nw / sentences as f64) - 84.6 * (syllables as f64 / nw);
    Ok(Readability { raw, norm: raw / 100.0 })
}

/// Token → (polarity, subjectivity) weights.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Lexicon {
    entries: HashMap<String, (f64, f64)>,
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self::parse(include_str!("../../resources/lexicon.tsv")).expect("shipped lexicon parses")
    }

    pub fn from_entries<I: IntoIterator<Item = (String, f64, f64)>>(entries: I) -> Self {
        Self {
            entries: entries.into_iter().map(|(t, p, s)| (t.to_lowercase(), (p, s))).collect(),
        }
    }

    /// `token<TAB>polarity<TAB>subjectivity` lines; `#` starts a comment.
    pub fn parse(raw: &str) -> Result<Self, MetricError> {
        let mut entries = HashMap::new();
        for (i, line) in raw.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| MetricError::LexiconParse { line: i + 1, message };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(err(format!("expected 3 columns, got {}", cols.len())));
            }
            let p: f64 = cols[1].trim().parse().map_err(|e| err(format!("polarity: {e}")))?;
            let s: f64 = cols[2].trim().parse().map_err(|e| err(format!("subjectivity: {e}")))?;
            entries.insert(cols[0].trim().to_lowercase(), (p, s));
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let raw = std::fs::read_to_string(path).map_err(|e| MetricError::Io(e.to_string()))?;
        Self::parse(&raw)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sentiment {
    pub polarity: f64,
    pub subjectivity: f64,
}

/// Mean weights over tokens found in the lexicon; `(0, 0)` with no hits.
pub fn sentiment(text: &str, lexicon: &Lexicon) -> Sentiment {
    let hits: Vec<(f64, f64)> = tokenize(text).iter().filter_map(|t| lexicon.entries.get(t).copied()).collect();
    if hits.is_empty() {
        return Sentiment { polarity: 0.0, subjectivity: 0.0 };
    }
    let n = hits.len() as f64;
    let p = hits.iter().map(|h| h.0).sum::<f64>() / n;
    let s = hits.iter().map(|h| h.1).sum::<f64>() / n;
    Sentiment {
        polarity: p.clamp(-1.0, 1.0),
        subjectivity: s.clamp(0.0, 1.0),
    }
}

pub fn relevance(a: &str, b: &str, provider: &dyn EmbeddingProvider) -> Result<f64, MetricError> {
    Ok(cosine_similarity(&provider.embed(a)?, &provider.embed(b)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub relevance: f64,
    pub readability_raw: f64,
    pub readability_norm: f64,
    pub polarity: f64,
    pub subjectivity: f64,
}

pub fn metric_report(
    question: &str,
    response: &str,
    provider: &dyn EmbeddingProvider,
    lexicon: &Lexicon,
) -> Result<MetricReport, MetricError> {
    let r = flesch_reading_ease(response)?;
    let s = sentiment(response, lexicon);
    Ok(MetricReport {
        relevance: relevance(question, response, provider)?,
        readability_raw: r.raw,
        readability_norm: r.norm,
        polarity: s.polarity,
        subjectivity: s.subjectivity,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;

    #[test]
    fn syllables() {
        for (w, n) in [
            ("cat", 1),
            ("beautiful", 3),
            ("a", 1),
            ("the", 1),
            ("table", 2),
            ("make", 1),
            ("rhythm", 1),
            ("Therapist,", 3),
        ] {
            assert_eq!(count_syllables(w), n, "{w}");
        }
    }

    #[test]
    fn flesch_fixtures() {
        let r = flesch_reading_ease("The cat sat.").unwrap();
        assert!((r.raw - 119.19).abs() < 1e-9);
        assert!((r.norm - 1.1919).abs() < 1e-9);
        let r = flesch_reading_ease("Go. Go. Go.").unwrap();
        assert!((r.raw - 121.22).abs() < 1e-9);
        assert_eq!(flesch_reading_ease(""), Err(MetricError::NoWords));
        assert_eq!(flesch_reading_ease(" ... "), Err(MetricError::NoWords));
        assert_eq!(sentence_count("Hi there! How are you? fine"), 3);
        assert_eq!(sentence_count("version 1.5 is out."), 1);
    }

    #[test]
    fn sentiment_averages_hits() {
        let lex = Lexicon::from_entries([("happy".to_string(), 0.8, 0.9)]);
        assert_eq!(sentiment("nothing here", &lex), Sentiment { polarity: 0.0, subjectivity: 0.0 });
        assert_eq!(sentiment("happy", &lex), Sentiment { polarity: 0.8, subjectivity: 0.9 });
        assert_eq!(sentiment("happy happy", &lex), Sentiment { polarity: 0.8, subjectivity: 0.9 });
        let lex = Lexicon::from_entries([("great".to_string(), 3.0, -1.0)]);
        assert_eq!(sentiment("great", &lex), Sentiment { polarity: 1.0, subjectivity: 0.0 });
        assert!(!Lexicon::builtin().is_empty());
        assert!(matches!(Lexicon::parse("good\t1"), Err(MetricError::LexiconParse { line: 1, .. })));
    }

    #[test]
    fn relevance_bounds() {
        let e = HashingEmbedder::default();
        assert!((relevance("I feel anxious at work", "I feel anxious at work", &e).unwrap() - 1.0).abs() < 1e-12);
        let r = relevance("my cat sleeps all afternoon", "quarterly budget meeting tomorrow", &e).unwrap();
        assert!(r.abs() < 0.15, "{r}");
    }
}
