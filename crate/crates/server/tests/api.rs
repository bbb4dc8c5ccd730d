use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use elspin_server::{router, AppState, ServerConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{}/../../fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn app(data_dir: &std::path::Path) -> Router {
    let cfg = ServerConfig { data_dir: data_dir.to_path_buf(), ..ServerConfig::default() };
    router(Arc::new(AppState::new(cfg).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Body>, json_body: bool) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    if json_body {
        req = req.header("content-type", "application/json");
    }
    let resp = app.clone().oneshot(req.body(body.unwrap_or_else(Body::empty)).unwrap()).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::GET, uri, None, false).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json(app: &Router, uri: &str, v: Value) -> (StatusCode, Value) {
    let (s, b) = post_json_raw(app, uri, v).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn post_json_raw(app: &Router, uri: &str, v: Value) -> (StatusCode, Vec<u8>) {
    call(app, Method::POST, uri, Some(Body::from(v.to_string())), true).await
}

async fn post_text(app: &Router, uri: &str, text: String) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::POST, uri, Some(Body::from(text)), false).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

async fn upload(app: &Router, name: &str) -> String {
    let (s, v) = post_text(app, "/datasets", fixture(name)).await;
    assert_eq!(s, StatusCode::CREATED, "{v}");
    v["id"].as_str().unwrap().to_string()
}

async fn wait_for(app: &Router, job: &str) -> Value {
    for _ in 0..600 {
        let (s, v) = get_json(app, &format!("/jobs/{job}")).await;
        assert_eq!(s, StatusCode::OK);
        if v["status"] == "done" || v["status"] == "failed" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(100)).await;
    }
    panic!("job {job} did not finish");
}

#[tokio::test]
async fn upload_is_fingerprinted_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let a = upload(&app, "frozen_500.csv").await;
    let b = upload(&app, "frozen_500.csv").await;
    assert_eq!(a, b);
    let (s, summary) = get_json(&app, &format!("/datasets/{a}/summary")).await;
    assert_eq!(s, StatusCode::OK);
    let rows = summary.as_array().unwrap();
    assert_eq!(rows.last().unwrap()["polymer"], "TOTAL");
    assert_eq!(rows.last().unwrap()["n"], 500);
    let (_, polymers) = get_json(&app, &format!("/datasets/{a}/polymers")).await;
    assert_eq!(polymers.as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(), 500);
    let (s, err) = get_json(&app, "/datasets/nope/summary").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(err["error"]["code"], "not_found");
}

#[tokio::test]
async fn train_validation_mirrors_preconditions() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = upload(&app, "frozen_500.csv").await;
    let (s, v) = post_json(&app, "/train", json!({"dataset_id": id, "folds": 4})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"]["code"], "invalid_folds");
    let (s, v) = post_json(&app, "/train", json!({"dataset_id": id, "test_fraction": 0.5})).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_test_fraction")));
    let (s, v) = post_json(&app, "/train", json!({"dataset_id": id, "learners": ["cubist"]})).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("unknown_learner")));
    let (s, _) = post_json(&app, "/train", json!({"dataset_id": "missing"})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, v) = call(&app, Method::POST, "/train", Some(Body::from("{not json")), true).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let v: Value = serde_json::from_slice(&v).unwrap();
    assert_eq!(v["error"]["code"], "invalid_request");
}

#[tokio::test]
async fn feasibility_status_counts_the_five_row_table() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (_, before) = get_json(&app, "/feasibility/status").await;
    assert_eq!(before["entries"], 0);
    assert_eq!(before["fallback_incompatibility"], true);
    let (s, _) = post_text(&app, "/feasibility/solubility", fixture("solubility_5.csv")).await;
    assert_eq!(s, StatusCode::OK);
    let (_, v) = get_json(&app, "/feasibility/status").await;
    assert_eq!((v["counts"]["ok"].as_u64(), v["counts"]["cond"].as_u64(), v["counts"]["no"].as_u64()), (Some(3), Some(1), Some(1)));
    let (_, v) = post_text(&app, "/feasibility/incompatibility", fixture("incompatible.csv")).await;
    assert_eq!(v["fallback_incompatibility"], false);
    assert_eq!(v["incompatible_pairs"], 4);
    let (s, v) = post_text(&app, "/feasibility/solubility", "polymer,solvent,rating\nPAN,dmf,MAYBE\n".into()).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_table")));
}

#[tokio::test]
async fn train_then_inspect_simulate_and_persist() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let id = upload(&app, "synthetic.csv").await;
    post_text(&app, "/feasibility/solubility", fixture("solubility.csv")).await;
    let (s, job) = post_json(
        &app,
        "/train",
        json!({"dataset_id": id, "sampling": "random", "n": 800, "folds": 3, "learners": ["linear", "tree"], "seed": 5}),
    )
    .await;
    assert_eq!(s, StatusCode::ACCEPTED);
    let done = wait_for(&app, job["job_id"].as_str().unwrap()).await;
    assert_eq!(done["status"], "done", "{done}");
    assert_eq!(done["progress"], 1.0);
    let model = done["result"].as_str().unwrap().to_string();

    let (s, m) = get_json(&app, &format!("/models/{model}/metrics")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(m["metadata"]["sample_size"], 800);
    assert!(m["report"]["best"].is_string());
    let (s, table) = call(&app, Method::GET, m["table_export"].as_str().unwrap(), None, false).await;
    assert_eq!(s, StatusCode::OK);
    assert!(String::from_utf8(table).unwrap().starts_with("sampling,learner"));

    let (s, d) = get_json(&app, &format!("/models/{model}/diagnostics")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(d["qq"].as_array().unwrap().len() > 100);

    let (s, imp) = get_json(&app, &format!("/models/{model}/importance?repeats=2&seed=1")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(imp["features"][0]["rank"], 1);

    let (s, sur) = get_json(&app, &format!("/models/{model}/surrogate?max_depth=2")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(sur["text"].as_str().unwrap().contains("fidelity"));

    let (s, grid) = post_json(
        &app,
        &format!("/models/{model}/surface"),
        json!({"var_a": "solution_concentration", "var_b": "voltage", "resolution": 4, "polymer": "PAN"}),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(grid["predictions"].as_array().unwrap().len(), 4);
    let (s, _) = post_json(&app, &format!("/models/{model}/surface"), json!({"var_a": "polymer", "var_b": "voltage"})).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let imc = json!({"mode": "optimization", "polymer": "PAN", "target": 340, "tolerance": 50, "n": 2000, "strictness": "strict", "seed": 9});
    let (s1, a) = post_json_raw(&app, &format!("/models/{model}/imc"), imc.clone()).await;
    let (s2, b) = post_json_raw(&app, &format!("/models/{model}/imc"), imc).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b, "same request and seed must give identical bytes");
    let a: Value = serde_json::from_slice(&a).unwrap();
    assert!(a["summary"]["acceptance_rate"].is_number());
    assert!(a["summary"]["success_probability"].is_number() || a["summary"]["accepted"] == 0);
    let (s, draws) = call(&app, Method::GET, a["draws_export"].as_str().unwrap(), None, false).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(String::from_utf8(draws).unwrap().lines().count(), 2001);

    let (s, v) = post_json(&app, &format!("/models/{model}/imc"), json!({"mode": "sideways", "polymer": "PAN", "target": 1, "tolerance": 1})).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid_argument")));

    let (s, saved) = post_json(&app, "/bundles/save", json!({"model_id": model})).await;
    assert_eq!(s, StatusCode::OK, "{saved}");
    let (s, loaded) = post_json(&app, "/bundles/load", json!({"path": format!("{model}.espn"), "dataset_id": id})).await;
    assert_eq!(s, StatusCode::CREATED);
    let reloaded = loaded["model_id"].as_str().unwrap();
    let exp = json!({"mode": "experimental", "polymer": "PVDF", "target": 400, "tolerance": 40, "n": 500, "seed": 3});
    let (_, x) = post_json(&app, &format!("/models/{model}/imc"), exp.clone()).await;
    let (_, y) = post_json(&app, &format!("/models/{reloaded}/imc"), exp).await;
    assert_eq!(x["summary"], y["summary"]);
    assert!(x["summary"].get("acceptance_rate").is_none());
    let (s, v) = get_json(&app, &format!("/models/{reloaded}/diagnostics")).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::CONFLICT, Some("no_training_artifacts")));

    let bad = dir.path().join("bad.espn");
    let mut bytes = std::fs::read(dir.path().join(format!("{model}.espn"))).unwrap();
    bytes.truncate(bytes.len() - 10);
    std::fs::write(&bad, bytes).unwrap();
    let (s, v) = post_json(&app, "/bundles/load", json!({"path": "bad.espn"})).await;
    assert_eq!((s, v["error"]["code"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("checksum_mismatch")));
}
