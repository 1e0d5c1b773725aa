use axum::body::Body;
use axum::http::{Request, StatusCode};
use hearth_core::embedding::HashingEmbedder;
use hearth_core::knowledge_base::ingest;
use hearth_core::llm::ScriptedLlm;
use hearth_core::rag::{Clock, Engine, SessionConfig};
use hearth_core::service::router;
use hearth_core::service::persistence::PersistenceStore;
use hearth_core::service::SessionManager;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;
use tower::ServiceExt;

fn manager(store: Option<PersistenceStore>) -> Arc<SessionManager> {
    let emb = Arc::new(HashingEmbedder::default());
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/corpus5.csv");
    let kb = ingest(&corpus, emb.as_ref()).unwrap();
    let engine = Engine::new(emb, Arc::new(ScriptedLlm::rules()))
        .with_kb(Arc::new(kb))
        .with_clock(Clock::logical());
    Arc::new(SessionManager::new(engine, store, SessionConfig::default()))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn new_session(app: &axum::Router, config: Option<Value>) -> String {
    let body = config.map(|c| json!({ "config": c })).unwrap_or(json!({}));
    let (st, v) = call(app, "POST", "/sessions", Some(body)).await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn health_and_config() {
    let app = router(manager(None));
    let (st, v) = call(&app, "GET", "/healthz", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    let (st, v) = call(&app, "GET", "/config", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["defaults"]["alpha"], 0.2);
    assert_eq!(v["defaults"]["k"], 1);
    assert_eq!(v["knowledge_base"]["distinct_questions"], 5);
    assert_eq!(v["persistent"], false);
}

#[tokio::test]
async fn ui_page_is_served() {
    let app = router(manager(None));
    let resp = app.oneshot(Request::get("/ui").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    let html = String::from_utf8(body.to_vec()).unwrap();
    assert!(html.contains("/sessions/${sid}/messages"));
}

#[tokio::test]
async fn conversation_roundtrip_with_entities() {
    let app = router(manager(None));
    let id = new_session(&app, Some(json!({ "update_every": 2 }))).await;
    let uri = format!("/sessions/{id}/messages");

    let (st, v) = call(&app, "POST", &uri, Some(json!({ "text": "Derek is a co-worker who keeps criticizing my reports." }))).await;
    assert_eq!(st, StatusCode::OK, "{v}");
    assert_eq!(v["trace"]["exchange"], 1);
    let (_, v) = call(&app, "POST", &uri, Some(json!({ "text": "I feel tense around Derek at work." }))).await;
    assert_eq!(v["trace"]["entity_update"].as_array().unwrap().len(), 1);

    let (st, ents) = call(&app, "GET", &format!("/sessions/{id}/entities"), None).await;
    assert_eq!(st, StatusCode::OK);
    let ents = ents.as_array().unwrap();
    assert_eq!(ents.len(), 1);
    assert_eq!(ents[0]["display_name"], "Derek");
    assert!(ents[0]["summary"].as_str().unwrap().contains("criticizing"));

    let (_, v) = call(&app, "POST", &uri, Some(json!({ "text": "My meeting with Derek is tomorrow." }))).await;
    assert!(v["reply"].as_str().unwrap().contains("Derek"), "{v}");

    let (st, h) = call(&app, "GET", &format!("/sessions/{id}/history?limit=2"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(h.as_array().unwrap().len(), 2);
    let (_, h) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    let h = h.as_array().unwrap();
    assert_eq!(h.len(), 6);
    assert_eq!(h[0]["content"], "Derek is a co-worker who keeps criticizing my reports.");
}

#[tokio::test]
async fn error_shapes() {
    let app = router(manager(None));
    let (st, v) = call(&app, "POST", "/sessions/missing/messages", Some(json!({ "text": "hi" }))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "session_not_found");
    let (st, v) = call(&app, "GET", "/sessions/missing/entities", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["code"], "session_not_found");

    let (st, v) = call(&app, "POST", "/sessions", Some(json!({ "config": { "alpha": 3.0 } }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "validation_error");

    let id = new_session(&app, None).await;
    let (st, v) = call(&app, "GET", &format!("/sessions/{id}/history?limit=0"), None).await;
    assert!(st.is_client_error(), "{st} {v}");

    let (st, _) = call(&app, "DELETE", &format!("/sessions/{id}"), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    let (st, _) = call(&app, "GET", &format!("/sessions/{id}/history"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn concurrent_posts_serialize_per_session() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager(Some(PersistenceStore::open(dir.path()).unwrap()));
    let app = router(m.clone());
    let id = new_session(&app, None).await;
    let mut handles = Vec::new();
    for i in 0..8 {
        let app = app.clone();
        let uri = format!("/sessions/{id}/messages");
        handles.push(tokio::spawn(async move {
            call(&app, "POST", &uri, Some(json!({ "text": format!("message number {i}") }))).await.0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    let s = m.snapshot(&id).unwrap();
    assert_eq!(s.full_log.len(), 16);
    let mut exchanges: Vec<u64> = m.store().unwrap().traces(&id).unwrap().iter().map(|t| t.exchange).collect();
    exchanges.sort();
    assert_eq!(exchanges, (1..=8).collect::<Vec<_>>());
}
