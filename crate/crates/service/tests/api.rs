use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use miracle_core::data::{fit_codec, generate_synthetic, ClinicalSchema, DatasetSplit, SynthConfig};
use miracle_core::model::{checkpoint, Ablation, MiracleConfig};
use miracle_core::remarks::CompletionConfig;
use miracle_core::Miracle;
use miracle_service::audit::AuditLog;
use miracle_service::{router, AppState, DemoData, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn data() -> DatasetSplit {
    generate_synthetic(&SynthConfig {
        sizes: [120, 30, 30],
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config(ablation: Ablation) -> MiracleConfig {
    MiracleConfig {
        clinical_dims: vec![16, 768],
        radiomic_dims: vec![16, 768],
        classifier_hidden: vec![16],
        ablation,
        ..MiracleConfig::default()
    }
}

struct Harness {
    state: Arc<AppState>,
    app: axum::Router,
    _dir: tempfile::TempDir,
}

fn harness_with(config: Option<MiracleConfig>, ttl: Duration) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let schema = ClinicalSchema::stand_in();
    let codec = fit_codec(&schema, &data.train).unwrap();
    let mut st = AppState::from_config(&ServiceConfig {
        completion: CompletionConfig::stub(),
        session_ttl: ttl,
        audit_log: Some(dir.path().join("audit.jsonl")),
        ..ServiceConfig::default()
    })
    .unwrap();
    st.demo = Some(DemoData::new(
        schema,
        data.iter().map(|(s, r)| (s, r.clone())).collect(),
    ));
    if let Some(c) = config {
        st.set_model(Miracle::init(c, codec).unwrap());
    }
    let state = Arc::new(st);
    Harness {
        app: router(state.clone()),
        state,
        _dir: dir,
    }
}

fn harness() -> Harness {
    harness_with(Some(small_config(Ablation::Full)), Duration::from_secs(600))
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

fn first_patient(h: &Harness) -> (String, Value) {
    let (_, rec) = &h.state.demo.as_ref().unwrap().records[0];
    (rec.patient_id.clone(), serde_json::to_value(rec).unwrap())
}

#[tokio::test]
async fn healthz_and_predict_need_a_model() {
    let h = harness_with(None, Duration::from_secs(60));
    let (s, _) = call(&h.app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    let (s, v) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": "x"}))).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].is_string());
    let (s, _) = call(&h.app, "GET", "/model/info", None).await;
    assert_eq!(s, StatusCode::SERVICE_UNAVAILABLE);
}

#[tokio::test]
async fn predict_by_id_is_deterministic() {
    let h = harness();
    let (id, _) = first_patient(&h);
    let (s, a) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    assert_eq!(s, StatusCode::OK, "{a}");
    let p = a["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    assert!(!a["remark_text"].as_str().unwrap().is_empty());
    assert_eq!(a["sample_probabilities"].as_array().unwrap().len(), 10);
    assert_eq!(a["remark_origin"], "stub");
    let (_, b) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    assert_eq!(a["probability"], b["probability"]);
    assert_eq!(a["mc_std"], b["mc_std"]);
    assert_ne!(a["session_token"], b["session_token"]);
}

#[tokio::test]
async fn inline_payload_matches_demo_lookup() {
    let h = harness();
    let (id, rec) = first_patient(&h);
    let (_, by_id) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    let (s, inline) = call(&h.app, "POST", "/predict", Some(json!({"patient": rec.clone()}))).await;
    assert_eq!(s, StatusCode::OK, "{inline}");
    assert_eq!(by_id["probability"], inline["probability"]);
    let (s, bare) = call(&h.app, "POST", "/predict", Some(rec)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(bare["probability"], inline["probability"]);
}

#[tokio::test]
async fn missing_clinical_field_is_named() {
    let h = harness();
    let (_, mut rec) = first_patient(&h);
    rec["clinical"].as_object_mut().unwrap().remove("dlco_pct_pred");
    let (s, v) = call(&h.app, "POST", "/predict", Some(json!({"patient": rec}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["fields"], json!(["dlco_pct_pred"]));

    let (_, mut rec) = first_patient(&h);
    rec["radiomic"] = json!([1.0, 2.0]);
    rec["clinical"]["dlco_pct_pred"] = json!([1]);
    let (s, v) = call(&h.app, "POST", "/predict", Some(json!({"patient": rec}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["fields"], json!(["dlco_pct_pred", "radiomic"]));
}

#[tokio::test]
async fn malformed_and_unknown_requests() {
    let h = harness();
    let req = Request::post("/predict")
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = h.app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let (s, _) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": "nobody"}))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _) = call(&h.app, "POST", "/predict", Some(json!({}))).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (s, _) = call(&h.app, "GET", "/nowhere", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn intervene_contract() {
    let h = harness();
    let (id, _) = first_patient(&h);
    let (_, p) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    let token = p["session_token"].as_str().unwrap().to_string();
    let original = p["remark_text"].as_str().unwrap().to_string();

    let (s, same) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": token, "edited_remark": original})),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{same}");
    assert_eq!(same["delta_vs_previous"].as_f64().unwrap(), 0.0);
    assert_eq!(same["probability"], p["probability"]);

    let (s, edited) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": token, "edited_remark": "Severe emphysema, very poor diffusion capacity, high risk."})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let delta = edited["delta_vs_previous"].as_f64().unwrap();
    let expect = edited["probability"].as_f64().unwrap() - p["probability"].as_f64().unwrap();
    assert_eq!(delta, expect);

    // reverting restores the original probability exactly
    let (_, back) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": token, "edited_remark": original})),
    )
    .await;
    assert_eq!(back["probability"], p["probability"]);
    assert_eq!(back["delta_vs_previous"].as_f64().unwrap(), -delta);

    let (s, v) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": token, "edited_remark": "   "})),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST, "{v}");

    let (s, _) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": "deadbeef", "edited_remark": "x"})),
    )
    .await;
    assert_eq!(s, StatusCode::GONE);

    let path = h.state.audit.path().unwrap().to_path_buf();
    let entries = AuditLog::read_all(&path).unwrap();
    assert_eq!(entries.len(), 3);
    assert!(entries.iter().all(|e| e.session_token == token && e.patient_id == id));
    assert_eq!(entries[0].old_remark_sha256, entries[0].new_remark_sha256);
    assert_ne!(entries[1].old_remark_sha256, entries[1].new_remark_sha256);
    assert_eq!(entries[2].new_probability, p["probability"].as_f64().unwrap());
}

#[tokio::test]
async fn expired_session_is_gone() {
    let h = harness_with(Some(small_config(Ablation::Full)), Duration::from_millis(50));
    let (id, _) = first_patient(&h);
    let (_, p) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (s, _) = call(
        &h.app,
        "POST",
        "/intervene",
        Some(json!({"session_token": p["session_token"], "edited_remark": "new text"})),
    )
    .await;
    assert_eq!(s, StatusCode::GONE);
    assert_eq!(h.state.audit.count(), 0);
}

#[tokio::test]
async fn ablated_model_rejects_intervention() {
    for ablation in [Ablation::ClinicalOnly, Ablation::ClinicalRadiomic] {
        let h = harness_with(Some(small_config(ablation)), Duration::from_secs(60));
        let (id, _) = first_patient(&h);
        let (s, p) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
        assert_eq!(s, StatusCode::OK);
        assert!(p["channel_summary"]["remark"].is_null());
        let (s, _) = call(
            &h.app,
            "POST",
            "/intervene",
            Some(json!({"session_token": p["session_token"], "edited_remark": "anything"})),
        )
        .await;
        assert_eq!(s, StatusCode::CONFLICT);
    }
}

#[tokio::test]
async fn patients_pagination_and_lookup() {
    let h = harness();
    let (s, v) = call(&h.app, "GET", "/patients?page=1&page_size=50", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 180);
    assert_eq!(v["patients"].as_array().unwrap().len(), 50);
    let (s, v) = call(&h.app, "GET", "/patients?page=99", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["patients"], json!([]));
    let (id, rec) = first_patient(&h);
    let (s, v) = call(&h.app, "GET", &format!("/patients/{id}"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["clinical"], rec["clinical"]);
    assert_eq!(v["split"], "train");
    let (s, _) = call(&h.app, "GET", "/patients/missing", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn model_info_reports_constants() {
    let h = harness();
    let (s, v) = call(&h.app, "GET", "/model/info", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["embedding_dim"], 768);
    assert_eq!(v["mc_samples"], 10);
    assert_eq!(v["fusion_weights"], json!({"clinical": 0.5, "radiomic": 0.25, "remark": 0.25}));
    assert_eq!(v["embedder"], "feature-hashing-768");
    let (s, _) = call(&h.app, "GET", "/healthz", None).await;
    assert_eq!(s, StatusCode::OK);
    let (s, doc) = call(&h.app, "GET", "/openapi", None).await;
    assert_eq!(s, StatusCode::OK);
    for path in ["/predict", "/intervene", "/patients", "/patients/{id}", "/model/info", "/healthz"] {
        assert!(doc["paths"][path].is_object(), "{path}");
    }
}

#[tokio::test]
async fn checkpoint_load_reports_file_digest() {
    let dir = tempfile::tempdir().unwrap();
    let data = data();
    let codec = fit_codec(&ClinicalSchema::stand_in(), &data.train).unwrap();
    let model = Miracle::init(small_config(Ablation::Full), codec).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&model, None, &path).unwrap();
    let st = AppState::from_config(&ServiceConfig {
        completion: CompletionConfig::stub(),
        checkpoint: Some(path.clone()),
        ..ServiceConfig::default()
    })
    .unwrap();
    let app = router(Arc::new(st));
    let (s, v) = call(&app, "GET", "/model/info", None).await;
    assert_eq!(s, StatusCode::OK);
    let digest = checkpoint::file_digest(&std::fs::read(&path).unwrap());
    assert_eq!(v["checkpoint"]["sha256"], digest);
    assert_eq!(v["parameter_checksum"], model.parameter_checksum());
}

#[tokio::test]
async fn request_mix_leaves_parameters_untouched() {
    let h = harness();
    let before = h.state.model().unwrap().model.parameter_checksum();
    let ids: Vec<String> = h.state.demo.as_ref().unwrap().records.iter().map(|(_, r)| r.patient_id.clone()).collect();
    let mut token = String::new();
    for i in 0..1000 {
        match i % 4 {
            0 => {
                let (s, v) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": ids[i % ids.len()]}))).await;
                assert_eq!(s, StatusCode::OK);
                token = v["session_token"].as_str().unwrap().to_string();
            }
            1 | 2 => {
                let (s, _) = call(
                    &h.app,
                    "POST",
                    "/intervene",
                    Some(json!({"session_token": token, "edited_remark": format!("edit number {i}")})),
                )
                .await;
                assert_eq!(s, StatusCode::OK);
            }
            _ => {
                let (s, _) = call(&h.app, "GET", "/model/info", None).await;
                assert_eq!(s, StatusCode::OK);
            }
        }
    }
    assert_eq!(h.state.model().unwrap().model.parameter_checksum(), before);
    assert_eq!(h.state.audit.count(), 500);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_edits_in_one_session_serialize() {
    let h = harness();
    let (id, _) = first_patient(&h);
    let (_, p) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    let token = p["session_token"].as_str().unwrap().to_string();
    let mut tasks = Vec::new();
    for i in 0..8 {
        let app = h.app.clone();
        let token = token.clone();
        tasks.push(tokio::spawn(async move {
            call(&app, "POST", "/intervene", Some(json!({"session_token": token, "edited_remark": format!("edit {i}")}))).await
        }));
    }
    for t in tasks {
        assert_eq!(t.await.unwrap().0, StatusCode::OK);
    }
    let entries = AuditLog::read_all(h.state.audit.path().unwrap()).unwrap();
    assert_eq!(entries.len(), 8);
    // each edit starts from the previous one's result
    for w in entries.windows(2) {
        assert_eq!(w[0].new_remark_sha256, w[1].old_remark_sha256);
        assert_eq!(w[0].new_probability, w[1].old_probability);
    }
}

#[tokio::test]
async fn intervene_latency_with_default_architecture() {
    let h = harness_with(Some(MiracleConfig::default()), Duration::from_secs(600));
    let (id, _) = first_patient(&h);
    let (_, p) = call(&h.app, "POST", "/predict", Some(json!({"patient_id": id}))).await;
    let token = p["session_token"].as_str().unwrap().to_string();
    let mut times = Vec::new();
    for i in 0..60 {
        let t = Instant::now();
        let (s, _) = call(
            &h.app,
            "POST",
            "/intervene",
            Some(json!({"session_token": token, "edited_remark": format!("Moderate COPD, edit {i}, reduced DLCO.")})),
        )
        .await;
        times.push(t.elapsed());
        assert_eq!(s, StatusCode::OK);
    }
    times.sort();
    let p95 = times[(times.len() * 95).div_ceil(100) - 1];
    assert!(p95 < Duration::from_millis(200), "p95 {p95:?}");
}
