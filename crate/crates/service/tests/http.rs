use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use medreply_core::corpus::{synth_generate, SynthSpec};
use medreply_core::io::fingerprint;
use medreply_core::pipeline::{suggest, train_artifacts, Artifacts, PipelineConfig};
use medreply_service::{
    online_precision_at_k, read_selection_log, router, AppState, CannedSummary, Health, ServiceConfig, SuggestResponse,
};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Fixture {
    _dir: tempfile::TempDir,
    artifacts: PathBuf,
    messages: Vec<String>,
}

/// Artifacts trained once on a small synthetic corpus, plus a pool of
/// patient messages to query with.
fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let corpus = synth_generate(&SynthSpec {
            n_intents: 8,
            pairs_per_intent: 60,
            seed: 3,
            ..SynthSpec::default()
        })
        .unwrap();
        let cfg = PipelineConfig::default();
        let mut art = train_artifacts(
            &corpus.dataset,
            Arc::new(corpus.embeddings.clone()),
            &corpus.abbreviations,
            Vec::new(),
            &cfg,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let artifacts = dir.path().join("artifacts");
        art.save(&artifacts, "synthetic", &cfg).unwrap();
        let mut messages: Vec<String> = corpus.dataset.pairs().iter().map(|p| p.patient_text.clone()).collect();
        messages.push("word ".repeat(300));
        messages.push("?!".into());
        Fixture {
            _dir: dir,
            artifacts,
            messages,
        }
    })
}

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig {
        artifact_dir: dir.to_owned(),
        ..ServiceConfig::default()
    }
}

fn app(cfg: &ServiceConfig) -> Router {
    router(AppState::load(cfg).unwrap())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Vec<u8>>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, Body::from))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or(Value::Null)
    };
    (status, value)
}

async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    call(app, "POST", uri, Some(serde_json::to_vec(&body).unwrap())).await
}

type Comparable = (bool, u64, Vec<(usize, String, String, u64, usize)>);

/// Response fields that must match in-process suggest exactly.
fn comparable(r: &SuggestResponse) -> Comparable {
    (
        r.triggered,
        r.trigger_score.to_bits(),
        r.items
            .iter()
            .map(|i| (i.rank, i.response_id.clone(), i.text.clone(), i.score.to_bits(), i.cluster_id))
            .collect(),
    )
}

#[tokio::test]
async fn suggest_matches_in_process_pipeline() {
    let fx = fixture();
    let app = app(&config(&fx.artifacts));
    let art = Artifacts::load(&fx.artifacts).unwrap();
    let mut triggered = 0;
    for text in fx.messages.iter().step_by(fx.messages.len() / 200).take(200) {
        let (status, body) = post_json(&app, "/suggest", json!({ "text": text })).await;
        assert_eq!(status, StatusCode::OK, "{text}");
        let got: SuggestResponse = serde_json::from_value(body).unwrap();
        let want = SuggestResponse::from_suggestion(String::new(), suggest(text, art.options(), &art).unwrap());
        assert_eq!(comparable(&got), comparable(&want), "{text}");
        assert!(got.items.len() <= art.options().k);
        triggered += usize::from(got.triggered);
    }
    assert!(triggered > 0);
}

#[tokio::test]
async fn below_threshold_is_silent() {
    let fx = fixture();
    let app = app(&config(&fx.artifacts));
    let art = Artifacts::load(&fx.artifacts).unwrap();
    let quiet = fx
        .messages
        .iter()
        .find(|t| !suggest(t, art.options(), &art).unwrap().triggered)
        .expect("some message stays below the threshold");
    let (status, body) = post_json(&app, "/suggest", json!({ "text": quiet })).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["triggered"], json!(false));
    assert_eq!(body["items"], json!([]));
}

#[tokio::test]
async fn parallel_requests_match_serial() {
    let fx = fixture();
    let app = app(&config(&fx.artifacts));
    let texts: Vec<String> = fx.messages.iter().take(100).cloned().collect();
    let mut serial = Vec::new();
    for t in &texts {
        let (_, body) = post_json(&app, "/suggest", json!({ "text": t })).await;
        serial.push(comparable(&serde_json::from_value(body).unwrap()));
    }
    let handles: Vec<_> = texts
        .iter()
        .cloned()
        .map(|t| {
            let app = app.clone();
            tokio::spawn(async move { post_json(&app, "/suggest", json!({ "text": t })).await })
        })
        .collect();
    let mut ids = std::collections::HashSet::new();
    for (h, want) in handles.into_iter().zip(&serial) {
        let (status, body) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        let got: SuggestResponse = serde_json::from_value(body).unwrap();
        assert!(ids.insert(got.request_id.clone()));
        assert_eq!(&comparable(&got), want);
    }
}

#[tokio::test]
async fn suggest_errors() {
    let fx = fixture();
    let cfg = ServiceConfig {
        max_body_bytes: 1024,
        ..config(&fx.artifacts)
    };
    let app = app(&cfg);
    assert_eq!(post_json(&app, "/suggest", json!({ "text": "   " })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, "/suggest", json!({ "txt": "hi" })).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(
        call(&app, "POST", "/suggest", Some(b"{not json".to_vec())).await.0,
        StatusCode::BAD_REQUEST
    );
    let big = json!({ "text": "a".repeat(2000) });
    assert_eq!(post_json(&app, "/suggest", big).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn unloaded_service_returns_503() {
    let app = router(AppState::new(None, &ServiceConfig::default()).unwrap());
    assert_eq!(
        post_json(&app, "/suggest", json!({ "text": "hello" })).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
    assert_eq!(call(&app, "GET", "/canned", None).await.0, StatusCode::SERVICE_UNAVAILABLE);
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], json!("unloaded"));
}

#[tokio::test]
async fn canned_listing_matches_file() {
    let fx = fixture();
    let app = app(&config(&fx.artifacts));
    let (status, body) = call(&app, "GET", "/canned", None).await;
    assert_eq!(status, StatusCode::OK);
    let summary: CannedSummary = serde_json::from_value(body).unwrap();
    let file: Value = serde_json::from_str(&std::fs::read_to_string(fx.artifacts.join("canned_set.json")).unwrap()).unwrap();
    let responses = file["responses"].as_array().unwrap();
    assert_eq!(summary.responses.len(), responses.len());
    for r in responses {
        let entry = summary
            .responses
            .iter()
            .find(|e| e.id == r["id"].as_str().unwrap())
            .unwrap();
        assert_eq!(entry.text.as_bytes(), r["text"].as_str().unwrap().as_bytes());
        assert_eq!(entry.cluster_id as u64, r["cluster_id"].as_u64().unwrap());
    }
    assert!(summary.responses.windows(2).all(|w| w[0].id < w[1].id));
}

#[tokio::test]
async fn feedback_flow() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let selection = dir.path().join("selection.jsonl");
    let cfg = ServiceConfig {
        selection_log: Some(selection.clone()),
        k: Some(3),
        ..config(&fx.artifacts)
    };
    let app = app(&cfg);
    let (_, body) = post_json(&app, "/suggest", json!({ "text": fx.messages[0], "session_id": "s1" })).await;
    let id = body["request_id"].as_str().unwrap().to_owned();

    let event = |rank: Value, session: Value| json!({ "request_id": id, "chosen_rank": rank, "session_id": session });
    assert_eq!(post_json(&app, "/feedback", event(json!(1), json!("s1"))).await.0, StatusCode::NO_CONTENT);
    assert_eq!(read_selection_log(&selection).unwrap().len(), 1);
    assert_eq!(post_json(&app, "/feedback", event(json!(5), json!("s1"))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, "/feedback", event(json!(0), json!("s1"))).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_json(&app, "/feedback", event(Value::Null, json!("s1"))).await.0, StatusCode::NO_CONTENT);
    // no session id: accepted but not recorded
    assert_eq!(post_json(&app, "/feedback", event(json!(2), Value::Null)).await.0, StatusCode::NO_CONTENT);
    let unknown = json!({ "request_id": "nope", "chosen_rank": 1, "session_id": "s1" });
    assert_eq!(post_json(&app, "/feedback", unknown).await.0, StatusCode::NOT_FOUND);
    assert_eq!(
        call(&app, "POST", "/feedback", Some(b"[]".to_vec())).await.0,
        StatusCode::BAD_REQUEST
    );

    let events = read_selection_log(&selection).unwrap();
    assert_eq!(events.len(), 2);
    assert!(events.iter().all(|e| e.timestamp.is_some() && e.request_id == id));
    assert_eq!(online_precision_at_k(&events, 3), Some(0.5));
    let raw = std::fs::read_to_string(&selection).unwrap();
    assert!(!raw.contains(&fx.messages[0]));
}

#[tokio::test]
async fn request_log_is_replayable() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("requests.jsonl");
    let cfg = ServiceConfig {
        request_log: Some(log.clone()),
        ..config(&fx.artifacts)
    };
    let app = app(&cfg);
    let mut served = Vec::new();
    for t in fx.messages.iter().take(20) {
        let (_, body) = post_json(&app, "/suggest", json!({ "text": t })).await;
        let r: SuggestResponse = serde_json::from_value(body).unwrap();
        served.push((r.request_id, r.items.into_iter().map(|i| i.response_id).collect::<Vec<_>>()));
    }
    let lines: Vec<Value> = std::fs::read_to_string(&log)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 20);
    for (line, (id, ids)) in lines.iter().zip(&served) {
        assert_eq!(line["request_id"].as_str().unwrap(), id);
        let (_, again) = post_json(&app, "/suggest", json!({ "text": line["text"] })).await;
        let replayed: Vec<String> = again["items"]
            .as_array()
            .unwrap()
            .iter()
            .map(|i| i["response_id"].as_str().unwrap().to_owned())
            .collect();
        assert_eq!(&replayed, ids);
    }
}

#[tokio::test]
async fn health_reports_fingerprints_and_uptime() {
    let fx = fixture();
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(&fx.artifacts).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
    }
    let app1 = app(&config(dir.path()));
    let (status, body) = call(&app1, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    let first: Health = serde_json::from_value(body).unwrap();
    assert_eq!(first.status, "ok");
    for (name, fp) in &first.fingerprints {
        assert_eq!(fp, &fingerprint(&std::fs::read(dir.path().join(name)).unwrap()), "{name}");
    }
    let (_, body) = call(&app1, "GET", "/health", None).await;
    let second: Health = serde_json::from_value(body).unwrap();
    assert!(second.uptime_seconds >= first.uptime_seconds);

    // reformatting the canned set changes its hash and nothing else
    let path = dir.path().join("canned_set.json");
    let value: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    std::fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
    let (_, body) = call(&app(&config(dir.path())), "GET", "/health", None).await;
    let third: Health = serde_json::from_value(body).unwrap();
    for (name, fp) in &first.fingerprints {
        assert_eq!(fp != &third.fingerprints[name], name == "canned_set.json", "{name}");
    }
}

#[test]
fn missing_artifacts_fail_to_load() {
    let dir = tempfile::tempdir().unwrap();
    assert!(AppState::load(&config(&dir.path().join("absent"))).is_err());
}
