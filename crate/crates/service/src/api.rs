use std::collections::BTreeMap;

use miracle_core::data::{ClinicalSchema, ClinicalValue, FieldKind, PatientRecord, SplitName};
use miracle_core::model::FusionWeights;
use miracle_core::Prediction;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStat {
    pub weight: f64,
    /// L2 norm of the channel embedding (averaged over MC samples).
    pub norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub fusion_weights: FusionWeights,
    pub clinical: ChannelStat,
    pub radiomic: Option<ChannelStat>,
    pub remark: Option<ChannelStat>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictResponse {
    pub session_token: String,
    pub patient_id: String,
    pub probability: f64,
    pub mc_std: f64,
    pub sample_probabilities: Vec<f64>,
    pub remark_text: String,
    pub remark_origin: String,
    pub remark_model: String,
    pub seed: u64,
    pub channel_summary: ChannelSummary,
    pub session_ttl_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterveneRequest {
    pub session_token: String,
    pub edited_remark: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterveneResponse {
    pub session_token: String,
    pub patient_id: String,
    pub probability: f64,
    pub mc_std: f64,
    pub previous_probability: f64,
    /// `probability - previous_probability`.
    pub delta_vs_previous: f64,
    pub remark_text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientSummary {
    pub patient_id: String,
    pub split: String,
    pub label: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientPage {
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub patients: Vec<PatientSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PatientDetail {
    pub split: String,
    #[serde(flatten)]
    pub record: PatientRecord,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PageQuery {
    pub page: Option<usize>,
    pub page_size: Option<usize>,
}

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

fn norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn channel_summary(p: &Prediction, w: FusionWeights) -> ChannelSummary {
    ChannelSummary {
        fusion_weights: w,
        clinical: ChannelStat {
            weight: w.clinical,
            norm: norm(&p.embeddings.clinical_mean()),
        },
        radiomic: p.embeddings.radiomic_mean().map(|m| ChannelStat {
            weight: w.radiomic,
            norm: norm(&m),
        }),
        remark: p.embeddings.remark.as_ref().map(|m| ChannelStat {
            weight: w.remark,
            norm: norm(m),
        }),
    }
}

pub fn split_label(s: SplitName) -> String {
    s.as_str().to_string()
}

/// Checks an inline patient payload against `schema` and builds a record.
/// Every offending field is reported at once.
pub fn record_from_payload(
    schema: &ClinicalSchema,
    radiomic_dim: usize,
    payload: &Value,
) -> Result<PatientRecord, ApiError> {
    let mut bad = Vec::new();
    let patient_id = match payload.get("patient_id").and_then(Value::as_str) {
        Some(id) if !id.trim().is_empty() => id.to_string(),
        _ => {
            bad.push("patient_id".to_string());
            String::new()
        }
    };
    let empty = serde_json::Map::new();
    let clinical_obj = match payload.get("clinical") {
        Some(Value::Object(m)) => m,
        _ => {
            bad.push("clinical".to_string());
            &empty
        }
    };
    let mut clinical = BTreeMap::new();
    for f in &schema.fields {
        match (clinical_obj.get(&f.name), f.kind) {
            (None | Some(Value::Null), _) => bad.push(f.name.clone()),
            (Some(Value::Number(n)), _) => {
                clinical.insert(f.name.clone(), ClinicalValue::Number(n.as_f64().unwrap_or(f64::NAN)));
            }
            (Some(Value::String(s)), FieldKind::Categorical) => {
                clinical.insert(f.name.clone(), ClinicalValue::Text(s.clone()));
            }
            (Some(_), _) => bad.push(f.name.clone()),
        }
    }
    let radiomic: Vec<f64> = match payload.get("radiomic").and_then(Value::as_array) {
        Some(a) if a.len() == radiomic_dim && a.iter().all(Value::is_number) => {
            a.iter().filter_map(Value::as_f64).collect()
        }
        _ => {
            bad.push("radiomic".to_string());
            Vec::new()
        }
    };
    let label = payload.get("label").and_then(Value::as_u64).unwrap_or(0) as u8;
    if !bad.is_empty() {
        return Err(ApiError::invalid_fields(bad));
    }
    Ok(PatientRecord {
        patient_id,
        clinical,
        radiomic,
        label,
    })
}
