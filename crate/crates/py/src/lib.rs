//! Python bindings. Structured results cross the boundary as plain dicts and
//! lists (serialized through JSON), so Python callers never see Rust types.

use hearth_core::embedding::HashingEmbedder;
use hearth_core::evaluation::{
    builtin_scenarios, flesch_reading_ease as flesch, levene_with, mann_whitney_u as mwu, parse_scenarios,
    run_memory_ablation, shapiro_wilk as swilk, welch_t as welch, AblationArm, LeveneCenter, TestResult,
};
use hearth_core::knowledge_base::{ingest, preference_score as pref, KnowledgeBase};
use hearth_core::llm::{LlmProvider, RemoteLlm, ScriptedLlm};
use hearth_core::privacy::{anonymize, detect_pii, restore, AnonymizationMap, RuleBasedDetector, SurrogatePools};
use hearth_core::rag::{respond, Clock, Engine as CoreEngine, Session as CoreSession, SessionConfig};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

create_exception!(hearth, HearthError, PyException);

fn fail<E: std::fmt::Display>(e: E) -> PyErr {
    HearthError::new_err(e.to_string())
}

fn invalid<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(value).map_err(fail)?;
    py.import("json")?.call_method1("loads", (s,))
}

fn test_result<'py>(py: Python<'py>, r: Result<TestResult, impl std::fmt::Display>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &r.map_err(invalid)?)
}

/// Reversible anonymizer with one persistent surrogate map.
#[pyclass(module = "hearth")]
struct Anonymizer {
    map: Mutex<AnonymizationMap>,
    detector: RuleBasedDetector,
    pools: SurrogatePools,
}

#[pymethods]
impl Anonymizer {
    #[new]
    #[pyo3(signature = (seed = 0))]
    fn new(seed: u64) -> Self {
        Self {
            map: Mutex::new(AnonymizationMap::new("py", seed)),
            detector: RuleBasedDetector::builtin(),
            pools: SurrogatePools::builtin(),
        }
    }

    fn anonymize(&self, text: &str) -> PyResult<String> {
        let spans = detect_pii(text, &self.detector).map_err(fail)?;
        let mut map = self.map.lock().unwrap();
        Ok(anonymize(text, &spans, &mut map, &self.pools).map_err(fail)?.text)
    }

    fn restore(&self, text: &str) -> String {
        restore(text, &self.map.lock().unwrap())
    }

    /// `[(kind, original, placeholder), ...]` in insertion order.
    fn mapping(&self) -> Vec<(String, String, String)> {
        self.map
            .lock()
            .unwrap()
            .entries()
            .iter()
            .map(|e| (e.kind.as_str().to_string(), e.original.clone(), e.placeholder.clone()))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.map.lock().unwrap().len()
    }
}

/// Shared pipeline machinery: embedder, optional knowledge base, model.
#[pyclass(module = "hearth", frozen)]
struct Engine {
    inner: CoreEngine,
}

#[pymethods]
impl Engine {
    /// `corpus` is a CSV or a snapshot written by `hearth ingest`. `llm` is
    /// "scripted" (offline, deterministic) or "remote" (LLM_BASE_URL).
    #[new]
    #[pyo3(signature = (corpus = None, llm = "scripted", model = "gpt-4o-mini", logical_clock = false))]
    fn new(corpus: Option<PathBuf>, llm: &str, model: &str, logical_clock: bool) -> PyResult<Self> {
        let emb = Arc::new(HashingEmbedder::default());
        let provider: Arc<dyn LlmProvider> = match llm {
            "scripted" => Arc::new(ScriptedLlm::rules()),
            "remote" => Arc::new(RemoteLlm::from_env(model)),
            other => return Err(invalid(format!("unknown llm {other:?}; use \"scripted\" or \"remote\""))),
        };
        let mut inner = CoreEngine::new(emb.clone(), provider);
        if let Some(path) = corpus {
            let kb = if path.extension().is_some_and(|e| e == "json") {
                KnowledgeBase::load_snapshot(&path)
            } else {
                ingest(&path, emb.as_ref())
            }
            .map_err(fail)?;
            inner = inner.with_kb(Arc::new(kb));
        }
        if logical_clock {
            inner = inner.with_clock(Clock::logical());
        }
        Ok(Self { inner })
    }

    /// A fresh conversation. `config` is a dict of session settings
    /// (alpha, short_term_n, update_every, k, template, seed, short_term, long_term).
    #[pyo3(signature = (config = None, session_id = None))]
    fn session(
        slf: Bound<'_, Self>,
        config: Option<Bound<'_, PyAny>>,
        session_id: Option<String>,
    ) -> PyResult<Session> {
        let py = slf.py();
        let cfg = match config {
            Some(c) => {
                let raw: String = py.import("json")?.call_method1("dumps", (c,))?.extract()?;
                SessionConfig::from_json(&raw).map_err(invalid)?
            }
            None => SessionConfig::default(),
        };
        let id = session_id.unwrap_or_else(|| "py".to_string());
        Ok(Session {
            engine: slf.unbind(),
            inner: Mutex::new(CoreSession::new(id, cfg).map_err(invalid)?),
        })
    }
}

/// One conversation bound to an engine.
#[pyclass(module = "hearth")]
struct Session {
    engine: Py<Engine>,
    inner: Mutex<CoreSession>,
}

#[pymethods]
impl Session {
    /// Runs one exchange and returns `{"reply": ..., "trace": {...}}`.
    fn respond<'py>(&self, py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
        let engine = self.engine.get();
        let r = py
            .detach(|| respond(&engine.inner, &mut self.inner.lock().unwrap(), text))
            .map_err(fail)?;
        to_py(py, &r)
    }

    fn entities<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.lock().unwrap().entity_views())
    }

    #[pyo3(signature = (limit = 100))]
    fn history<'py>(&self, py: Python<'py>, limit: usize) -> PyResult<Bound<'py, PyAny>> {
        if limit == 0 {
            return Err(invalid("limit must be at least 1"));
        }
        to_py(py, &self.inner.lock().unwrap().history_restored(limit))
    }

    #[getter]
    fn exchanges(&self) -> u64 {
        self.inner.lock().unwrap().exchanges()
    }

    /// Full session state as a JSON string. The turn log is anonymized but the
    /// `anonymization_map` member holds the raw originals.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&*self.inner.lock().unwrap()).map_err(fail)
    }
}

#[pyfunction]
fn preference_score(upvotes: i64, views: i64) -> PyResult<f64> {
    pref(upvotes, views).map_err(invalid)
}

/// `(raw, normalized)` Flesch reading ease.
#[pyfunction]
fn flesch_reading_ease(text: &str) -> PyResult<(f64, f64)> {
    let r = flesch(text).map_err(invalid)?;
    Ok((r.raw, r.norm))
}

#[pyfunction]
fn shapiro_wilk<'py>(py: Python<'py>, xs: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    test_result(py, swilk(&xs))
}

#[pyfunction]
#[pyo3(signature = (xs, ys, center = "mean"))]
fn levene<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>, center: &str) -> PyResult<Bound<'py, PyAny>> {
    let center = match center {
        "mean" => LeveneCenter::Mean,
        "median" => LeveneCenter::Median,
        other => return Err(invalid(format!("center must be \"mean\" or \"median\", got {other:?}"))),
    };
    test_result(py, levene_with(&xs, &ys, center))
}

#[pyfunction]
fn welch_t<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    test_result(py, welch(&xs, &ys))
}

#[pyfunction]
fn mann_whitney_u<'py>(py: Python<'py>, xs: Vec<f64>, ys: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    test_result(py, mwu(&xs, &ys))
}

/// Memory-on versus memory-off ablation with the offline engine. Uses the
/// shipped scenarios unless a JSON string is given.
#[pyfunction]
#[pyo3(signature = (scenarios_json = None))]
fn run_ablation<'py>(py: Python<'py>, scenarios_json: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cases = match scenarios_json {
        Some(raw) => parse_scenarios(raw).map_err(invalid)?,
        None => builtin_scenarios(),
    };
    let emb = Arc::new(HashingEmbedder::default());
    let engine = CoreEngine::new(emb.clone(), Arc::new(ScriptedLlm::rules()));
    let report = py
        .detach(|| {
            run_memory_ablation(
                &cases,
                &AblationArm::memory(engine.clone(), SessionConfig::default()),
                &AblationArm::baseline(engine, SessionConfig::default()),
                emb.as_ref(),
            )
        })
        .map_err(fail)?;
    to_py(py, &report)
}

#[pymodule]
pub fn hearth(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HearthError", m.py().get_type::<HearthError>())?;
    m.add_class::<Anonymizer>()?;
    m.add_class::<Engine>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(preference_score, m)?)?;
    m.add_function(wrap_pyfunction!(flesch_reading_ease, m)?)?;
    m.add_function(wrap_pyfunction!(shapiro_wilk, m)?)?;
    m.add_function(wrap_pyfunction!(levene, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t, m)?)?;
    m.add_function(wrap_pyfunction!(mann_whitney_u, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    Ok(())
}
