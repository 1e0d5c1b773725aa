//! Counseling Q&A corpus: ingest, preference ranking and gated retrieval.

use crate::embedding::{cosine, EmbeddingError, EmbeddingProvider, EmbeddingVector, ProviderConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

pub const CORPUS_COLUMNS: [&str; 10] = [
    "questionID",
    "questionTitle",
    "questionText",
    "questionLink",
    "topic",
    "therapistInfo",
    "therapistURL",
    "answerText",
    "upvotes",
    "views",
];

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("negative count: upvotes={upvotes}, views={views}")]
    NegativeCount { upvotes: i64, views: i64 },
    #[error("corpus row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("corpus contains no rows")]
    EmptyCorpus,
    #[error("knowledge base is empty")]
    EmptyKnowledgeBase,
    #[error("invalid retrieval parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot error: {0}")]
    Snapshot(#[from] serde_json::Error),
}

/// `ln(upvotes + 1) / ln(views + 1)`; zero when either count is zero.
pub fn preference_score(upvotes: i64, views: i64) -> Result<f64, KbError> {
    if upvotes < 0 || views < 0 {
        return Err(KbError::NegativeCount { upvotes, views });
    }
    if upvotes == 0 || views == 0 {
        return Ok(0.0);
    }
    Ok((upvotes as f64).ln_1p() / (views as f64).ln_1p())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QAPair {
    pub question_id: String,
    pub question_title: String,
    pub question_text: String,
    pub topic: String,
    pub therapist_info: String,
    pub answer_text: String,
    pub upvotes: u64,
    pub views: u64,
}

impl QAPair {
    pub fn preference(&self) -> f64 {
        preference_score(self.upvotes as i64, self.views as i64).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedQuestion {
    pub question_id: String,
    pub vector: EmbeddingVector,
    pub question_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAnswer {
    pub answer_text: String,
    pub preference_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub question_id: String,
    pub question_text: String,
    pub similarity: f64,
    pub answers: Vec<RankedAnswer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct IngestReport {
    pub rows: usize,
    pub distinct_questions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    questions: Vec<EmbeddedQuestion>,
    pairs: Vec<QAPair>,
    provider_config: ProviderConfig,
    #[serde(skip)]
    by_question: HashMap<String, Vec<usize>>,
}

/// Text that gets embedded for a question: title and body joined.
pub fn question_embedding_text(title: &str, text: &str) -> String {
    match (title.trim().is_empty(), text.trim().is_empty()) {
        (true, _) => text.trim().to_string(),
        (_, true) => title.trim().to_string(),
        _ => format!("{} {}", title.trim(), text.trim()),
    }
}

impl KnowledgeBase {
    pub fn from_pairs(
        pairs: Vec<QAPair>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self, KbError> {
        if pairs.is_empty() {
            return Err(KbError::EmptyCorpus);
        }
        let mut questions = Vec::new();
        let mut seen = HashMap::new();
        for pair in &pairs {
            if seen.contains_key(&pair.question_id) {
                continue;
            }
            seen.insert(pair.question_id.clone(), ());
            let text = question_embedding_text(&pair.question_title, &pair.question_text);
            questions.push(EmbeddedQuestion {
                question_id: pair.question_id.clone(),
                vector: provider.embed(&text)?,
                question_text: text,
            });
        }
        let mut kb = Self {
            questions,
            pairs,
            provider_config: provider.config(),
            by_question: HashMap::new(),
        };
        kb.reindex();
        Ok(kb)
    }

    /// Builds from pre-computed question vectors (snapshots, tests).
    pub fn from_parts(
        questions: Vec<EmbeddedQuestion>,
        pairs: Vec<QAPair>,
        provider_config: ProviderConfig,
    ) -> Self {
        let mut kb = Self { questions, pairs, provider_config, by_question: HashMap::new() };
        kb.reindex();
        kb
    }

    fn reindex(&mut self) {
        self.by_question.clear();
        for (i, p) in self.pairs.iter().enumerate() {
            self.by_question.entry(p.question_id.clone()).or_default().push(i);
        }
    }

    pub fn questions(&self) -> &[EmbeddedQuestion] {
        &self.questions
    }

    pub fn pairs(&self) -> &[QAPair] {
        &self.pairs
    }

    pub fn provider_config(&self) -> &ProviderConfig {
        &self.provider_config
    }

    pub fn report(&self) -> IngestReport {
        IngestReport { rows: self.pairs.len(), distinct_questions: self.questions.len() }
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<(), KbError> {
        let json = serde_json::to_vec(self)?;
        crate::service::persistence::write_atomic(path, &json)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, KbError> {
        let raw = std::fs::read(path)?;
        let mut kb: Self = serde_json::from_slice(&raw)?;
        kb.reindex();
        Ok(kb)
    }

    /// Answers to one question, best preference first; ties keep corpus order.
    pub fn ranked_answers(&self, question_id: &str) -> Vec<RankedAnswer> {
        let mut answers: Vec<RankedAnswer> = self
            .by_question
            .get(question_id)
            .into_iter()
            .flatten()
            .map(|&i| RankedAnswer {
                answer_text: self.pairs[i].answer_text.clone(),
                preference_score: self.pairs[i].preference(),
            })
            .collect();
        answers.sort_by(|a, b| b.preference_score.total_cmp(&a.preference_score));
        answers
    }

    /// Best-matching question and its similarity, first-ingested on ties.
    pub fn nearest(&self, query: &EmbeddingVector) -> Result<(usize, f64), KbError> {
        let mut best: Option<(usize, f64)> = None;
        for (i, q) in self.questions.iter().enumerate() {
            let sim = cosine(query, &q.vector)?.value;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        best.ok_or(KbError::EmptyKnowledgeBase)
    }

    /// Gated top-k retrieval. Returns the best similarity alongside the
    /// (possibly absent) result so callers can report closed gates too.
    pub fn retrieve_scored(
        &self,
        query: &EmbeddingVector,
        alpha: f64,
        k: usize,
    ) -> Result<(f64, Option<RetrievalResult>), KbError> {
        if k == 0 {
            return Err(KbError::InvalidParameter("k must be at least 1".into()));
        }
        if !(-1.0..=1.0).contains(&alpha) {
            return Err(KbError::InvalidParameter(format!("alpha {alpha} outside [-1, 1]")));
        }
        let (idx, similarity) = self.nearest(query)?;
        if similarity < alpha {
            return Ok((similarity, None));
        }
        let q = &self.questions[idx];
        let mut answers = self.ranked_answers(&q.question_id);
        answers.truncate(k);
        Ok((
            similarity,
            Some(RetrievalResult {
                question_id: q.question_id.clone(),
                question_text: q.question_text.clone(),
                similarity,
                answers,
            }),
        ))
    }
}

pub fn retrieve(
    query: &EmbeddingVector,
    kb: &KnowledgeBase,
    alpha: f64,
    k: usize,
) -> Result<Option<RetrievalResult>, KbError> {
    kb.retrieve_scored(query, alpha, k).map(|(_, r)| r)
}

/// Parses a corpus CSV. The header must list the ten corpus columns in order;
/// a leading unnamed index column (as in the public export) is tolerated.
pub fn parse_corpus<R: std::io::Read>(reader: R) -> Result<Vec<QAPair>, KbError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| KbError::Parse { row: 0, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().map(|h| h.trim_start_matches('\u{feff}')).collect();
    let offset = if names.len() == CORPUS_COLUMNS.len() + 1 && names[0].trim().is_empty() {
        1
    } else {
        0
    };
    if names[offset..] != CORPUS_COLUMNS {
        return Err(KbError::Parse {
            row: 0,
            message: format!("header {:?} does not match {:?}", names, CORPUS_COLUMNS),
        });
    }

    let mut pairs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| KbError::Parse { row, message: e.to_string() })?;
        let field = |c: usize| record.get(c + offset).unwrap_or("").to_string();
        let count = |c: usize, name: &str| -> Result<u64, KbError> {
            let raw = field(c);
            let raw = raw.trim();
            // some exports write counts as floats ("3.0")
            raw.parse::<u64>()
                .or_else(|_| match raw.parse::<f64>() {
                    Ok(v) if v >= 0.0 && v.fract() == 0.0 => Ok(v as u64),
                    _ => Err(()),
                })
                .map_err(|_| KbError::Parse {
                    row,
                    message: format!("{name}={raw:?} is not a non-negative integer"),
                })
        };
        let question_id = field(0);
        if question_id.trim().is_empty() {
            return Err(KbError::Parse { row, message: "empty questionID".into() });
        }
        pairs.push(QAPair {
            question_id,
            question_title: field(1),
            question_text: field(2),
            topic: field(4),
            therapist_info: field(5),
            answer_text: field(7),
            upvotes: count(8, "upvotes")?,
            views: count(9, "views")?,
        });
    }
    if pairs.is_empty() {
        return Err(KbError::EmptyCorpus);
    }
    Ok(pairs)
}

pub fn ingest(corpus_path: &Path, provider: &dyn EmbeddingProvider) -> Result<KnowledgeBase, KbError> {
    let file = std::fs::File::open(corpus_path)?;
    let pairs = parse_corpus(std::io::BufReader::new(file))?;
    let kb = KnowledgeBase::from_pairs(pairs, provider)?;
    let report = kb.report();
    tracing::info!(rows = report.rows, questions = report.distinct_questions, "ingested corpus");
    Ok(kb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::HashingEmbedder;
    use proptest::prelude::*;

    #[test]
    fn preference_score_fixtures() {
        assert_eq!(preference_score(0, 500).unwrap(), 0.0);
        assert!((preference_score(9, 99).unwrap() - 0.5).abs() < 1e-12);
        assert!((preference_score(3, 3).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(preference_score(4, 0).unwrap(), 0.0);
        assert!(preference_score(12, 5).unwrap() > 1.0);
        assert!(matches!(preference_score(-1, 3), Err(KbError::NegativeCount { .. })));
    }

    proptest! {
        #[test]
        fn preference_monotone_in_upvotes(views in 1i64..20_000, a in 0i64..20_000, b in 0i64..20_000) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(lo != hi);
            prop_assert!(preference_score(lo, views).unwrap() < preference_score(hi, views).unwrap());
        }
    }

    const FIXTURE: &str = "questionID,questionTitle,questionText,questionLink,topic,therapistInfo,therapistURL,answerText,upvotes,views\n\
        q1,Feeling anxious,\"I feel anxious, all the time\",http://x,anxiety,T1,http://t1,\"Try breathing.\",9,99\n\
        q1,Feeling anxious,\"I feel anxious, all the time\",http://x,anxiety,T2,http://t2,Talk to someone.,0,7\n\
        q2,Can't sleep,I wake up at night,http://y,sleep-improvement,T3,http://t3,Keep a routine.,3,3\n";

    #[test]
    fn parse_fixture_counts() {
        let pairs = parse_corpus(FIXTURE.as_bytes()).unwrap();
        assert_eq!(pairs.len(), 3);
        let kb = KnowledgeBase::from_pairs(pairs, &HashingEmbedder::default()).unwrap();
        assert_eq!(kb.report(), IngestReport { rows: 3, distinct_questions: 2 });
        assert_eq!(kb.questions()[0].question_text, "Feeling anxious I feel anxious, all the time");
    }

    #[test]
    fn malformed_views_reports_row() {
        let bad = FIXTURE.replace(",3,3\n", ",3,abc\n");
        match parse_corpus(bad.as_bytes()) {
            Err(KbError::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn leading_index_column_and_wrong_header() {
        let indexed: String = FIXTURE
            .lines()
            .enumerate()
            .map(|(i, l)| if i == 0 { format!(",{l}\n") } else { format!("{},{l}\n", i - 1) })
            .collect();
        assert_eq!(parse_corpus(indexed.as_bytes()).unwrap().len(), 3);
        let wrong = FIXTURE.replacen("views", "seen", 1);
        assert!(matches!(parse_corpus(wrong.as_bytes()), Err(KbError::Parse { row: 0, .. })));
        let header_only = FIXTURE.lines().next().unwrap().to_string() + "\n";
        assert!(matches!(parse_corpus(header_only.as_bytes()), Err(KbError::EmptyCorpus)));
    }

    fn basis(dim: usize, i: usize) -> EmbeddingVector {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        EmbeddingVector::new(v).unwrap()
    }

    fn pair(qid: &str, answer: &str, up: u64, views: u64) -> QAPair {
        QAPair {
            question_id: qid.into(),
            question_title: qid.into(),
            question_text: String::new(),
            topic: "t".into(),
            therapist_info: "x".into(),
            answer_text: answer.into(),
            upvotes: up,
            views,
        }
    }

    fn basis_kb() -> KnowledgeBase {
        let questions = (0..3)
            .map(|i| EmbeddedQuestion {
                question_id: format!("q{i}"),
                vector: basis(4, i),
                question_text: format!("question {i}"),
            })
            .collect();
        let pairs = vec![
            pair("q0", "half", 9, 99),
            pair("q0", "zero", 0, 7),
            pair("q0", "one", 3, 3),
            pair("q1", "only", 1, 10),
            pair("q2", "other", 1, 10),
        ];
        KnowledgeBase::from_parts(questions, pairs, ProviderConfig::Other { name: "basis".into(), dim: 4 })
    }

    #[test]
    fn orthogonal_query_is_gated_out() {
        let kb = basis_kb();
        assert!(retrieve(&basis(4, 3), &kb, 0.2, 1).unwrap().is_none());
    }

    #[test]
    fn exact_match_returns_question_and_best_answer() {
        let kb = basis_kb();
        let r = retrieve(&basis(4, 0), &kb, 0.2, 1).unwrap().unwrap();
        assert_eq!(r.question_id, "q0");
        assert_eq!(r.similarity, 1.0);
        assert_eq!(r.answers.len(), 1);
        assert_eq!(r.answers[0].answer_text, "one");
        assert!((r.answers[0].preference_score - 1.0).abs() < 1e-12);

        let all = retrieve(&basis(4, 0), &kb, 0.2, 10).unwrap().unwrap();
        let scores: Vec<_> = all.answers.iter().map(|a| a.answer_text.as_str()).collect();
        assert_eq!(scores, vec!["one", "half", "zero"]);
    }

    #[test]
    fn gate_boundary_is_inclusive_and_alpha_minus_one_always_opens() {
        let kb = basis_kb();
        // cosine against e0 is 1/√2, evaluated the same way as alpha below
        let q = EmbeddingVector::new(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let alpha = 1.0 / 2f64.sqrt();
        let (sim, r) = kb.retrieve_scored(&q, alpha, 1).unwrap();
        assert_eq!(sim, alpha);
        assert!(r.is_some());
        assert!(retrieve(&basis(4, 3), &kb, -1.0, 1).unwrap().is_some());
    }

    #[test]
    fn ties_pick_first_ingested_question() {
        let kb = basis_kb();
        let q = EmbeddingVector::new(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(retrieve(&q, &kb, -1.0, 1).unwrap().unwrap().question_id, "q0");
    }

    #[test]
    fn parameter_validation() {
        let kb = basis_kb();
        assert!(matches!(kb.retrieve_scored(&basis(4, 0), 0.2, 0), Err(KbError::InvalidParameter(_))));
        assert!(matches!(kb.retrieve_scored(&basis(4, 0), 1.5, 1), Err(KbError::InvalidParameter(_))));
        let empty = KnowledgeBase::from_parts(vec![], vec![], ProviderConfig::Other { name: "e".into(), dim: 4 });
        assert!(matches!(retrieve(&basis(4, 0), &empty, 0.2, 1), Err(KbError::EmptyKnowledgeBase)));
    }
}
