use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::record::{ClinicalSchema, FieldKind, PatientRecord, RADIOMIC_FEATURES};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FieldCodec {
    /// Min-max scaling; `min == max` maps every value to 0.
    Continuous { min: f64, max: f64 },
    /// Label encoding over sorted unique training categories. Unseen
    /// categories map to `categories.len()`.
    Categorical { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiomicStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub constant: bool,
}

/// Preprocessing statistics fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCodec {
    pub schema: ClinicalSchema,
    pub clinical: Vec<FieldCodec>,
    pub radiomic: Vec<RadiomicStats>,
}

/// Model-ready feature vectors for one patient.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedRecord {
    pub clinical: Vec<f64>,
    pub radiomic: Vec<f64>,
    /// Fields whose category was not seen during fitting.
    pub unseen: Vec<String>,
}

/// Fits min-max, label-encoding and standardization statistics on `train`.
pub fn fit_codec(schema: &ClinicalSchema, train: &[PatientRecord]) -> Result<FeatureCodec> {
    schema.validate()?;
    if train.is_empty() {
        return Err(Error::Input("cannot fit codec on an empty training split".into()));
    }
    for r in train {
        r.validate(schema)?;
    }
    let mut clinical = Vec::with_capacity(schema.fields.len());
    for f in &schema.fields {
        let values = train.iter().map(|r| &r.clinical[&f.name]);
        let codec = match f.kind {
            FieldKind::Continuous => {
                let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                for (r, v) in train.iter().zip(values) {
                    let x = v.as_number().filter(|x| x.is_finite()).ok_or_else(|| {
                        Error::Schema(format!(
                            "patient {}: field {} is not numeric ({v})",
                            r.patient_id, f.name
                        ))
                    })?;
                    min = min.min(x);
                    max = max.max(x);
                }
                FieldCodec::Continuous { min, max }
            }
            FieldKind::Categorical => {
                let set: BTreeSet<String> = values.map(|v| v.as_category()).collect();
                FieldCodec::Categorical {
                    categories: set.into_iter().collect(),
                }
            }
        };
        clinical.push(codec);
    }

    let n = train.len() as f64;
    let radiomic = (0..RADIOMIC_FEATURES)
        .map(|j| {
            let mean = train.iter().map(|r| r.radiomic[j]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|r| (r.radiomic[j] - mean).powi(2))
                .sum::<f64>()
                / n;
            let std = var.sqrt();
            RadiomicStats {
                mean,
                std,
                constant: !(std > 1e-12 * mean.abs().max(1.0)),
            }
        })
        .collect();
    Ok(FeatureCodec {
        schema: schema.clone(),
        clinical,
        radiomic,
    })
}

impl FeatureCodec {
    pub fn clinical_dim(&self) -> usize {
        self.clinical.len()
    }

    pub fn radiomic_dim(&self) -> usize {
        self.radiomic.len()
    }

    pub fn encode(&self, record: &PatientRecord) -> Result<EncodedRecord> {
        record.validate(&self.schema)?;
        let mut unseen = Vec::new();
        let clinical = self
            .schema
            .fields
            .iter()
            .zip(&self.clinical)
            .map(|(f, codec)| {
                let v = &record.clinical[&f.name];
                match codec {
                    FieldCodec::Continuous { min, max } => {
                        let x = v.as_number().filter(|x| x.is_finite()).ok_or_else(|| {
                            Error::Schema(format!(
                                "patient {}: field {} is not numeric ({v})",
                                record.patient_id, f.name
                            ))
                        })?;
                        Ok(scale_min_max(x, *min, *max))
                    }
                    FieldCodec::Categorical { categories } => {
                        let c = v.as_category();
                        match categories.binary_search(&c) {
                            Ok(i) => Ok(i as f64),
                            Err(_) => {
                                log::warn!(
                                    "patient {}: unseen category {c:?} for {}, using reserved code",
                                    record.patient_id,
                                    f.name
                                );
                                unseen.push(f.name.clone());
                                Ok(categories.len() as f64)
                            }
                        }
                    }
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let radiomic = record
            .radiomic
            .iter()
            .zip(&self.radiomic)
            .map(|(&x, s)| if s.constant { 0.0 } else { (x - s.mean) / s.std })
            .collect();
        Ok(EncodedRecord {
            clinical,
            radiomic,
            unseen,
        })
    }
}

fn scale_min_max(x: f64, min: f64, max: f64) -> f64 {
    if max <= min {
        return 0.0;
    }
    ((x - min) / (max - min)).clamp(0.0, 1.0)
}
