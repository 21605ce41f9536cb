use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use explore_core::simuser::synth_dataset;
use explore_core::{Region, SessionConfig, SizeClass, SynthKind, TargetQuery};
use explore_service::config::merged_config;
use explore_service::{register, router, AppState, DatasetEntry, Manifest, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    let ds = synth_dataset(SynthKind::Uniform, 2000, 2, 4).unwrap().dataset;
    let truth = TargetQuery {
        regions: vec![Region::closed(&[(20.0, 60.0), (30.0, 70.0)])],
        size_class: SizeClass::Large,
    };
    let mut datasets = BTreeMap::new();
    datasets.insert("uniform".to_string(), Arc::new(DatasetEntry::new("uniform".into(), ds, Some(truth))));
    let tiny = synth_dataset(SynthKind::Uniform, 30, 2, 5).unwrap().dataset;
    datasets.insert("tiny".to_string(), Arc::new(DatasetEntry::new("tiny".into(), tiny, None)));
    router(AppState::new(datasets, SessionConfig::default()))
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

async fn create(app: &Router, dataset: &str) -> String {
    let (status, body) = call(app, "POST", "/v1/sessions", Some(json!({"dataset": dataset, "seed": 3}))).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert_eq!(body["version"], "v1");
    body["data"]["id"].as_str().unwrap().to_string()
}

/// Labels a batch by membership in x in [20, 60], y in [30, 70].
fn label_all(batch: &Value) -> Value {
    let items: Vec<Value> = batch["data"]["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| {
            let v = s["values"].as_array().unwrap();
            let (x, y) = (v[0].as_f64().unwrap(), v[1].as_f64().unwrap());
            let rel = (20.0..=60.0).contains(&x) && (30.0..=70.0).contains(&y);
            json!({"id": s["id"], "label": if rel { "relevant" } else { "irrelevant" }})
        })
        .collect();
    json!({ "items": items })
}

#[tokio::test]
async fn create_session_outcomes() {
    let app = app();
    let (status, body) = call(&app, "POST", "/v1/sessions", Some(json!({"dataset": "uniform"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(body["data"]["status"], "ready");
    assert!(body["data"]["links"]["batch"].as_str().unwrap().ends_with("/batch"));

    let (status, body) = call(&app, "POST", "/v1/sessions", Some(json!({"dataset": "nope"}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown-dataset");

    let bad = json!({"dataset": "uniform", "config": {"phases": {"budget": 0}}});
    let (status, body) = call(&app, "POST", "/v1/sessions", Some(bad)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "invalid-config");
    assert_eq!(body["error"]["field"], "phases.budget");

    let typo = json!({"dataset": "uniform", "config": {"phases": {"budgett": 3}}});
    let (status, body) = call(&app, "POST", "/v1/sessions", Some(typo)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "invalid-request");
}

#[tokio::test]
async fn batch_feedback_cycle() {
    let app = app();
    let id = create(&app, "uniform").await;
    let base = format!("/v1/sessions/{id}");

    let (status, pred) = call(&app, "GET", &format!("{base}/prediction"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(pred["data"]["model"], false);

    let (status, batch) = call(&app, "POST", &format!("{base}/batch"), None).await;
    assert_eq!(status, StatusCode::OK);
    let samples = batch["data"]["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 20);
    assert!(samples.iter().all(|s| s["phase"] == "discovery"));
    assert_eq!(batch["data"]["status"], "awaiting-feedback");

    let (status, again) = call(&app, "POST", &format!("{base}/batch"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(again["error"]["code"], "batch-pending");

    let mut feedback = label_all(&batch);
    let valid_items = feedback["items"].clone();
    feedback["items"].as_array_mut().unwrap().push(json!({"id": 99_999_999u64, "label": "relevant"}));
    let (status, body) = call(&app, "POST", &format!("{base}/feedback"), Some(feedback)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unknown-tuple");
    let (_, m) = call(&app, "GET", &format!("{base}/metrics"), None).await;
    assert_eq!(m["data"]["labels"]["relevant"], 0);
    assert_eq!(m["data"]["labels"]["irrelevant"], 0);
    assert_eq!(m["data"]["status"], "awaiting-feedback");

    let mut items = valid_items.as_array().unwrap().clone();
    items[0] = json!({"id": items[0]["id"], "label": "similar", "dims": ["a1"]});
    let (status, summary) = call(&app, "POST", &format!("{base}/feedback"), Some(json!({ "items": items }))).await;
    assert_eq!(status, StatusCode::OK, "{summary}");
    assert_eq!(summary["data"]["status"], "ready");
    assert_eq!(summary["data"]["similar"][0]["dims"], json!(["a1"]));
    assert!(summary["data"]["quality"]["f_measure"].is_number());

    let (_, p1) = call(&app, "GET", &format!("{base}/prediction"), None).await;
    let (_, p2) = call(&app, "GET", &format!("{base}/prediction"), None).await;
    assert_eq!(p1, p2);
    assert!(p1["data"]["grid"].is_object());
    if p1["data"]["model"] == true {
        assert!(p1["data"]["query"].is_string());
    }

    for _ in 0..10 {
        let (_, batch) = call(&app, "POST", &format!("{base}/batch"), None).await;
        let (status, _) = call(&app, "POST", &format!("{base}/feedback"), Some(label_all(&batch))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, pred) = call(&app, "GET", &format!("{base}/prediction"), None).await;
    assert_eq!(pred["data"]["model"], true);
    assert!(!pred["data"]["relevant"].as_array().unwrap().is_empty());
    assert!(pred["data"]["query"].as_str().unwrap().contains("a0"));
    let (_, m) = call(&app, "GET", &format!("{base}/metrics"), None).await;
    assert!(m["data"]["quality"]["f_measure"].as_f64().unwrap() > 0.5);
}

#[tokio::test]
async fn unknown_attribute_and_bare_feedback_are_rejected() {
    let app = app();
    let id = create(&app, "uniform").await;
    let base = format!("/v1/sessions/{id}");
    let (status, body) = call(&app, "POST", &format!("{base}/feedback"), Some(json!({"items": []}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"]["code"], "no-pending-batch");

    let (_, batch) = call(&app, "POST", &format!("{base}/batch"), None).await;
    let first = batch["data"]["samples"][0]["id"].clone();
    let fb = json!({"items": [{"id": first, "label": "similar", "dims": ["zz"]}]});
    let (status, body) = call(&app, "POST", &format!("{base}/feedback"), Some(fb)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["code"], "unknown-attribute");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_batches_have_one_winner() {
    let app = app();
    let id = create(&app, "uniform").await;
    let uri = format!("/v1/sessions/{id}/batch");
    let (a, b) = tokio::join!(call(&app, "POST", &uri, None), call(&app, "POST", &uri, None));
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn exhausted_session_completes_with_empty_batch() {
    let app = app();
    let id = create(&app, "tiny").await;
    let base = format!("/v1/sessions/{id}");
    let mut completed = false;
    for _ in 0..10 {
        let (status, batch) = call(&app, "POST", &format!("{base}/batch"), None).await;
        assert_eq!(status, StatusCode::OK);
        if batch["data"]["status"] == "completed" {
            assert!(batch["data"]["samples"].as_array().unwrap().is_empty());
            completed = true;
            break;
        }
        let (status, _) = call(&app, "POST", &format!("{base}/feedback"), Some(label_all(&batch))).await;
        assert_eq!(status, StatusCode::OK);
    }
    assert!(completed);
    let (_, m) = call(&app, "GET", &format!("{base}/metrics"), None).await;
    assert_eq!(m["data"]["shown"], 30);
    assert!(m["data"].get("quality").is_none());
}

#[tokio::test]
async fn terminate_removes_the_session() {
    let app = app();
    let id = create(&app, "uniform").await;
    let (status, body) = call(&app, "DELETE", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["data"]["status"], "completed");
    let (status, body) = call(&app, "GET", &format!("/v1/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"]["code"], "unknown-session");
}

#[tokio::test]
async fn manifest_registers_csv_and_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("ra,dec\n");
    for i in 0..50 {
        csv.push_str(&format!("{},{}\n", i as f64 * 2.0, 100.0 - i as f64));
    }
    std::fs::write(dir.path().join("sky.csv"), csv).unwrap();
    let manifest = r#"
[[datasets]]
id = "sky"
source = { type = "csv", path = "sky.csv" }
truth = { type = "regions", regions = [[[10.0, 40.0], [70.0, 95.0]]] }

[[datasets]]
id = "synth"
source = { type = "synthetic", kind = "skewed", size = 500, dims = 2, seed = 1 }
truth = { type = "generated", count = 1, size = "medium" }
"#;
    let path = dir.path().join("datasets.toml");
    std::fs::write(&path, manifest).unwrap();
    let datasets = register(&Manifest::from_path(&path).unwrap(), dir.path()).unwrap();
    assert_eq!(datasets.len(), 2);
    let sky = &datasets["sky"];
    assert_eq!(sky.dataset.len(), 50);
    assert!(sky.truth.as_ref().unwrap().relevant_ids(&sky.dataset).len() > 5);

    let app = router(AppState::new(datasets, SessionConfig::default()));
    let (status, body) = call(&app, "GET", "/v1/datasets", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["data"][0]["id"], "sky");
    assert_eq!(body["data"][0]["attributes"], json!(["ra", "dec"]));
}

#[test]
fn session_defaults_merge_and_validate() {
    let mut cfg = ServiceConfig::default();
    cfg.apply_session_overrides(r#"{"phases": {"budget": 7}, "discovery": "grid"}"#).unwrap();
    assert_eq!(cfg.session.phases.budget, 7);
    assert_eq!(cfg.session.phases.gamma, SessionConfig::default().phases.gamma);
    assert!(cfg.apply_session_overrides(r#"{"phases": {"budget": 0}}"#).is_err());
    assert!(merged_config(&SessionConfig::default(), &json!({"unknown": 1})).is_err());

    let file: ServiceConfig = toml::from_str("listen = \"0.0.0.0:9000\"\n[session.phases]\nbudget = 12\n").unwrap();
    assert_eq!(file.listen.port(), 9000);
    assert_eq!(file.session.phases.budget, 12);
}
