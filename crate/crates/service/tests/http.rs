use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use hardcase_core::ingest::read_labels_jsonl;
use hardcase_core::{
    generate_synthetic, join, score_blocked, BlockedOptions, EmbeddingMatrix, LabelVocab,
    LabeledDataset, PenaltyParams, SyntheticSpec,
};
use hardcase_service::{router, AppState, AuditLog, ReviewSession};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn blobs() -> LabeledDataset {
    generate_synthetic(&SyntheticSpec {
        n_per_class: 30,
        classes: 3,
        d: 6,
        label_flip_rate: 0.05,
        seed: 11,
        ..SyntheticSpec::default()
    })
    .unwrap()
    .dataset
}

fn opts() -> BlockedOptions {
    BlockedOptions::new(16, 2).unwrap()
}

fn app_with(ds: LabeledDataset, log: Option<AuditLog>) -> (Router, Arc<AppState>) {
    let session = ReviewSession::open(ds, PenaltyParams::default(), opts(), log).unwrap();
    let state = AppState::new(Some(session));
    (router(state.clone(), None), state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call_raw(app, method, uri, body).await;
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn call_raw(
    app: &Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn wait_job(app: &Router, id: u64) -> Value {
    for _ in 0..500 {
        let (status, v) = call(app, "GET", &format!("/api/jobs/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if v["job"]["state"] != "running" {
            return v;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("job {id} did not finish");
}

#[tokio::test]
async fn summary_and_samples() {
    let (app, _) = app_with(blobs(), None);
    let (status, v) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["stale"], false);
    assert_eq!(v["summary"]["n_total"], 90);
    assert_eq!(
        v["summary"]["params"],
        json!({"a": 5.0, "b": 10.0, "mode": "both"})
    );
    assert_eq!(
        v["dataset_fingerprint"],
        v["summary"]["working_fingerprint"]
    );

    let (_, page) = call(&app, "GET", "/api/samples?offset=0&limit=10", None).await;
    let rows = page["samples"].as_array().unwrap();
    assert_eq!(rows.len(), 10);
    assert_eq!(page["total"], 90);
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
    }
    let (_, page) = call(&app, "GET", "/api/samples?offset=90&limit=10", None).await;
    assert!(page["samples"].as_array().unwrap().is_empty());
    assert_eq!(page["total"], 90);
    assert!(page["dataset_fingerprint"].is_string());

    let (_, page) = call(&app, "GET", "/api/samples?limit=90&mode=case1", None).await;
    let c1: Vec<f64> = page["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["cp_case1"].as_f64().unwrap())
        .collect();
    assert!(c1.windows(2).all(|w| w[0] >= w[1]));
    let (status, _) = call(&app, "GET", "/api/samples?mode=bogus", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn decision_errors() {
    let (app, _) = app_with(blobs(), None);
    let (status, v) = call(
        &app,
        "POST",
        "/api/samples/nope/decision",
        Some(json!({"action": "keep"})),
    )
    .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "unknown_sample");
    assert!(v["dataset_fingerprint"].is_string());

    let (status, v) = call(
        &app,
        "POST",
        "/api/samples/s00000/decision",
        Some(json!({"action": "keep", "new_label": "class2"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["error"], "invalid_decision");

    let (status, _) = call(&app, "GET", "/api/samples/nope/neighbors", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, "GET", "/api/jobs/99", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, v) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(v["stale"], false);
    assert_eq!(v["summary"]["decisions"], 0);
}

#[tokio::test]
async fn no_session_returns_503() {
    let app = router(AppState::new(None), None);
    let (status, v) = call(&app, "GET", "/api/samples", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(v["error"], "no_session");
    assert_eq!(v["stale"], false);
}

#[tokio::test]
async fn rescore_without_changes_is_identical() {
    let (app, _) = app_with(blobs(), None);
    let (_, before) = call(&app, "GET", "/api/samples?limit=90", None).await;
    let (status, v) = call(&app, "POST", "/api/rescore", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = wait_job(&app, v["job_id"].as_u64().unwrap()).await;
    assert_eq!(job["job"]["state"], "done");
    assert_eq!(job["job"]["progress"], 1.0);
    assert_eq!(
        job["job"]["result"]["dataset_fingerprint"],
        before["dataset_fingerprint"]
    );
    let (_, after) = call(&app, "GET", "/api/samples?limit=90", None).await;
    assert_eq!(before["samples"], after["samples"]);
    assert_eq!(after["stale"], false);
}

#[tokio::test]
async fn relabel_export_rescore_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("audit.jsonl");
    let ds = blobs();
    let (app, _) = app_with(ds.clone(), Some(AuditLog::new(&log_path)));

    let (_, top) = call(&app, "GET", "/api/samples?limit=2", None).await;
    let first = top["samples"][0]["id"].as_str().unwrap().to_owned();
    let second = top["samples"][1]["id"].as_str().unwrap().to_owned();
    let (_, nb) = call(
        &app,
        "GET",
        &format!("/api/samples/{first}/neighbors?m=1"),
        None,
    )
    .await;
    let label = nb["neighbors"][0]["other_label"]
        .as_str()
        .unwrap()
        .to_owned();
    let current = top["samples"][0]["label"].as_str().unwrap().to_owned();
    let new_label = if label != current {
        label
    } else {
        "fresh".to_owned()
    };

    let (status, v) = call(
        &app,
        "POST",
        &format!("/api/samples/{first}/decision"),
        Some(json!({"action": "relabel", "new_label": new_label, "reviewer": "qa"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["stale"], true);
    let (status, _) = call(
        &app,
        "POST",
        &format!("/api/samples/{second}/decision"),
        Some(json!({"action": "mark_remove"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);

    let log = AuditLog::new(&log_path).read().unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].new_label, new_label);
    assert_eq!(log[0].reviewer, "qa");

    let (status, v) = call(&app, "POST", "/api/rescore", None).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let job = wait_job(&app, v["job_id"].as_u64().unwrap()).await;
    assert_eq!(job["job"]["result"]["n"], 89);

    let (status, bytes) = call_raw(&app, "GET", "/api/export/labels", None).await;
    assert_eq!(status, StatusCode::OK);
    let records = read_labels_jsonl(&bytes[..]).unwrap();
    assert_eq!(records.len(), 89);
    assert!(!records.ids.contains(&second));

    // offline rescore of the exported copy
    let keep: Vec<usize> = records
        .ids
        .iter()
        .map(|id| ds.index_of(id).unwrap())
        .collect();
    let emb = ds.embeddings().select_rows(&keep);
    let exported = join(emb, records).unwrap();
    let offline = score_blocked(&exported, &PenaltyParams::default(), &opts()).unwrap();
    let (_, page) = call(&app, "GET", "/api/samples?limit=1000", None).await;
    assert_eq!(page["stale"], false);
    assert_eq!(page["dataset_fingerprint"], offline.dataset_fingerprint);
    for row in page["samples"].as_array().unwrap() {
        let i = exported.index_of(row["id"].as_str().unwrap()).unwrap();
        assert_eq!(
            row["cp_total"].as_f64().unwrap().to_bits(),
            offline.cp_total[i].to_bits()
        );
        assert_eq!(row["rank"], offline.rank[i]);
    }

    // restart from the log reproduces the same working copy
    let (app2, _) = app_with(ds, Some(AuditLog::new(&log_path)));
    let (_, bytes2) = call_raw(&app2, "GET", "/api/export/labels", None).await;
    assert_eq!(bytes, bytes2);
}

#[tokio::test]
async fn concurrent_decisions_are_all_logged() {
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("audit.jsonl");
    let (app, _) = app_with(blobs(), Some(AuditLog::new(&log_path)));
    let mut handles = Vec::new();
    for i in 0..40 {
        let app = app.clone();
        handles.push(tokio::spawn(async move {
            let id = format!("s{:05}", i % 10);
            call(
                &app,
                "POST",
                &format!("/api/samples/{id}/decision"),
                Some(json!({"action": "keep"})),
            )
            .await
            .0
        }));
    }
    for h in handles {
        assert_eq!(h.await.unwrap(), StatusCode::OK);
    }
    assert_eq!(AuditLog::new(&log_path).read().unwrap().len(), 40);
    let (_, v) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(v["summary"]["decisions"], 40);
    // keep never changes the working copy
    assert_eq!(v["stale"], false);
}

#[tokio::test]
async fn remote_point_neighbors_are_case2() {
    // tight class A cluster, with one A sample far away
    let mut rows: Vec<Vec<f32>> = (0..10).map(|i| vec![1.0, 0.02 * i as f32, 0.0]).collect();
    rows.extend((0..10).map(|i| vec![0.0, 0.02 * i as f32, 1.0]));
    rows.push(vec![-1.0, 0.0, 0.0]);
    let mut labels = vec!["A"; 10];
    labels.extend(vec!["B"; 10]);
    labels.push("A");
    let (vocab, ints) = LabelVocab::from_labels(&labels);
    let ds = LabeledDataset::from_parts(
        (0..21).map(|i| format!("r{i}")).collect(),
        ints,
        vocab,
        vec![None; 21],
        vec![None; 21],
        EmbeddingMatrix::from_rows(&rows).unwrap(),
    )
    .unwrap();
    let (app, _) = app_with(ds, None);
    let (_, v) = call(&app, "GET", "/api/samples/r20/neighbors?m=3", None).await;
    let nb = v["neighbors"].as_array().unwrap();
    assert_eq!(nb.len(), 3);
    for n in nb {
        assert_eq!(n["case"], "Case2");
        assert!(n["cosine"].as_f64().unwrap() < 0.0);
    }
    let (_, v) = call(&app, "GET", "/api/samples/r20/neighbors?m=0", None).await;
    assert!(v["neighbors"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn projection_endpoint() {
    let (app, _) = app_with(blobs(), None);
    let (status, v) = call(&app, "GET", "/api/projection?k=10", None).await;
    assert_eq!(status, StatusCode::OK);
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 90);
    assert_eq!(pts.iter().filter(|p| p["highlighted"] == true).count(), 9);
    assert_eq!(v["rank"], 2);
    let (status, _) = call(&app, "GET", "/api/projection?k=500", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn static_ui_is_served() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>ok</html>").unwrap();
    let session = ReviewSession::open(blobs(), PenaltyParams::default(), opts(), None).unwrap();
    let app = router(AppState::new(Some(session)), Some(dir.path()));
    let (status, bytes) = call_raw(&app, "GET", "/index.html", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bytes, b"<html>ok</html>");
    let (status, _) = call(&app, "GET", "/api/summary", None).await;
    assert_eq!(status, StatusCode::OK);
}
