//! HTTP/JSON inference service: prediction with a session cache, remark
//! intervention with an audit log, demo patient browsing and model metadata.

pub mod api;
pub mod audit;
pub mod error;
mod openapi;
pub mod state;

use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use miracle_core::remarks::EMBEDDING_DIM;
use serde_json::{json, Value};

use crate::api::*;
use crate::audit::{now_ms, text_digest, AuditEntry};
use crate::error::ApiError;
pub use crate::state::{AppState, DemoData, LoadedModel, ServiceConfig};

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/predict", post(predict))
        .route("/intervene", post(intervene))
        .route("/patients", get(list_patients))
        .route("/patients/{id}", get(get_patient))
        .route("/model/info", get(model_info))
        .route("/healthz", get(healthz))
        .route("/openapi", get(openapi_doc))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no such route") })
        .with_state(state)
}

fn bad_body(e: JsonRejection) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, format!("malformed request body: {}", e.body_text()))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

async fn predict(State(st): State<Arc<AppState>>, body: Result<Json<Value>, JsonRejection>) -> ApiResult<PredictResponse> {
    let Json(body) = body.map_err(bad_body)?;
    let loaded = st.model().ok_or_else(ApiError::no_model)?;
    let schema = &loaded.model.codec().schema;
    let inline = body.get("patient").filter(|p| p.is_object()).or_else(|| body.get("clinical").map(|_| &body));
    let record = match (inline, body.get("patient_id").and_then(Value::as_str)) {
        (Some(payload), _) => record_from_payload(schema, loaded.model.codec().radiomic_dim(), payload)?,
        (None, Some(id)) => {
            let demo = st
                .demo
                .as_ref()
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no demo dataset loaded"))?;
            let (_, rec) = demo
                .get(id)
                .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown patient {id}")))?;
            rec.clone()
        }
        (None, None) => {
            return Err(ApiError::invalid_fields(vec!["patient_id".into()]));
        }
    };
    record.validate(schema).map_err(ApiError::from)?;
    let worker = st.clone();
    let model = loaded.clone();
    let prediction = blocking(move || {
        let remark = worker.remark_for(&model.model.codec().schema, &record)?;
        Ok(model.model.predict(&record, &remark)?)
    })
    .await?;
    let weights = loaded.model.fusion_weights();
    let resp = PredictResponse {
        session_token: String::new(),
        patient_id: prediction.patient_id.clone(),
        probability: prediction.probability,
        mc_std: prediction.mc_std,
        sample_probabilities: prediction.sample_probabilities.clone(),
        remark_text: prediction.remark.text.clone(),
        remark_origin: serde_json::to_value(prediction.remark.origin)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default(),
        remark_model: prediction.remark.model_name.clone(),
        seed: prediction.seed,
        channel_summary: channel_summary(&prediction, weights),
        session_ttl_secs: st.session_ttl.as_secs_f64(),
    };
    let session_token = st.open_session(prediction);
    Ok(Json(PredictResponse { session_token, ..resp }))
}

async fn intervene(
    State(st): State<Arc<AppState>>,
    body: Result<Json<InterveneRequest>, JsonRejection>,
) -> ApiResult<InterveneResponse> {
    let Json(req) = body.map_err(bad_body)?;
    let loaded = st.model().ok_or_else(ApiError::no_model)?;
    let entry = st.session(&req.session_token).ok_or_else(ApiError::expired)?;
    // held across the recompute so edits within one session apply in order
    let mut session = entry.state.lock().await;
    let prior = session.prediction.clone();
    let text = req.edited_remark.clone();
    let model = loaded.clone();
    let (prior, updated) = blocking(move || {
        let updated = model.model.intervene(&prior, &text)?;
        Ok((prior, updated))
    })
    .await?;
    st.audit
        .append(&AuditEntry {
            timestamp_ms: now_ms(),
            session_token: req.session_token.clone(),
            patient_id: updated.patient_id.clone(),
            old_remark_sha256: text_digest(&prior.remark.text),
            new_remark_sha256: text_digest(&updated.remark.text),
            old_probability: prior.probability,
            new_probability: updated.probability,
        })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("audit log write failed: {e}")))?;
    let resp = InterveneResponse {
        session_token: req.session_token,
        patient_id: updated.patient_id.clone(),
        probability: updated.probability,
        mc_std: updated.mc_std,
        previous_probability: prior.probability,
        delta_vs_previous: updated.probability - prior.probability,
        remark_text: updated.remark.text.clone(),
    };
    session.prediction = updated;
    Ok(Json(resp))
}

fn demo(st: &AppState) -> Result<&DemoData, ApiError> {
    st.demo
        .as_ref()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no demo dataset loaded"))
}

async fn list_patients(
    State(st): State<Arc<AppState>>,
    q: Result<Query<PageQuery>, QueryRejection>,
) -> ApiResult<PatientPage> {
    let Query(q) = q.map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.body_text()))?;
    let demo = demo(&st)?;
    let page = q.page.unwrap_or(0);
    let page_size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE).clamp(1, MAX_PAGE_SIZE);
    let patients = demo
        .records
        .iter()
        .skip(page.saturating_mul(page_size))
        .take(page_size)
        .map(|(s, r)| PatientSummary {
            patient_id: r.patient_id.clone(),
            split: split_label(*s),
            label: r.label,
        })
        .collect();
    Ok(Json(PatientPage {
        page,
        page_size,
        total: demo.records.len(),
        patients,
    }))
}

async fn get_patient(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<PatientDetail> {
    let (split, record) = demo(&st)?
        .get(&id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown patient {id}")))?;
    Ok(Json(PatientDetail {
        split: split_label(*split),
        record: record.clone(),
    }))
}

async fn model_info(State(st): State<Arc<AppState>>) -> ApiResult<Value> {
    let loaded = st.model().ok_or_else(ApiError::no_model)?;
    let m = &loaded.model;
    let cfg = m.config();
    Ok(Json(json!({
        "embedding_dim": cfg.embedding_dim,
        "remark_embedding_dim": EMBEDDING_DIM,
        "mc_samples": cfg.mc_samples,
        "fusion_weights": m.fusion_weights(),
        "ablation": m.ablation().as_str(),
        "embedder": m.embedder_name(),
        "parameter_count": m.networks().num_params(),
        "parameter_checksum": m.parameter_checksum(),
        "projection_checksum": m.projection().checksum(),
        "checkpoint": {
            "path": loaded.source.as_ref().map(|p| p.display().to_string()),
            "sha256": loaded.file_sha256,
            "best_epoch": loaded.history.as_ref().map(|h| h.best_epoch),
            "best_val_auc": loaded.history.as_ref().map(|h| h.best_val_auc),
        },
        "config": cfg,
    })))
}

async fn healthz(State(st): State<Arc<AppState>>) -> (StatusCode, Json<Value>) {
    match st.model() {
        Some(m) => (
            StatusCode::OK,
            Json(json!({"status": "ok", "parameter_checksum": m.checksum, "sessions": st.session_count()})),
        ),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "no model loaded"})),
        ),
    }
}

async fn openapi_doc() -> Json<Value> {
    Json(openapi::document())
}

/// Binds, serves until ctrl-c and sweeps expired sessions once a minute.
pub async fn serve(state: Arc<AppState>, bind: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    log::info!("listening on {}", listener.local_addr()?);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Builds state from `config` and serves on a fresh multi-thread runtime.
pub fn run(config: ServiceConfig) -> Result<(), Box<dyn std::error::Error>> {
    let state = Arc::new(AppState::from_config(&config)?);
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?
        .block_on(serve(state, config.bind))?;
    Ok(())
}
