use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CLINICAL_FIELDS: usize = 17;
pub const RADIOMIC_FEATURES: usize = 113;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Unit or short description used when rendering summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Ordered clinical field list. Field order is the canonical order used by
/// encoding and by summary rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalSchema {
    pub fields: Vec<FieldSpec>,
}

fn field(name: &str, kind: FieldKind, label: &str) -> FieldSpec {
    FieldSpec {
        name: name.into(),
        kind,
        label: Some(label.into()),
    }
}

impl ClinicalSchema {
    /// Stand-in schema of 12 continuous and 5 categorical preoperative fields.
    pub fn stand_in() -> Self {
        use FieldKind::*;
        Self {
            fields: vec![
                field("age_years", Continuous, "age in years"),
                field("sex", Categorical, "sex"),
                field("bmi", Continuous, "body-mass index in kg/m2"),
                field("smoking_status", Categorical, "smoking status"),
                field("pack_years", Continuous, "smoking history in pack-years"),
                field("fev1_pct_pred", Continuous, "FEV1 in percent predicted"),
                field("fvc_pct_pred", Continuous, "FVC in percent predicted"),
                field("dlco_pct_pred", Continuous, "DLCO in percent predicted"),
                field("hemoglobin_g_dl", Continuous, "hemoglobin in g/dL"),
                field("albumin_g_dl", Continuous, "serum albumin in g/dL"),
                field("creatinine_mg_dl", Continuous, "serum creatinine in mg/dL"),
                field("heart_rate_bpm", Continuous, "resting heart rate in beats/min"),
                field("charlson_index", Continuous, "Charlson comorbidity index"),
                field("asa_class", Categorical, "ASA physical status"),
                field("clinical_stage", Categorical, "clinical stage"),
                field("tumor_size_cm", Continuous, "tumor size in cm"),
                field("surgical_approach", Categorical, "planned surgical approach"),
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.len() != CLINICAL_FIELDS {
            return Err(Error::Schema(format!(
                "schema has {} clinical fields, expected {CLINICAL_FIELDS}",
                self.fields.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for f in &self.fields {
            if f.name.is_empty() || f.name == "patient_id" {
                return Err(Error::Schema(format!("invalid field name {:?}", f.name)));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate field {}", f.name)));
            }
        }
        Ok(())
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl Default for ClinicalSchema {
    fn default() -> Self {
        Self::stand_in()
    }
}

/// Raw value of one clinical field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClinicalValue {
    Number(f64),
    Text(String),
}

impl ClinicalValue {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            ClinicalValue::Number(v) => Some(*v),
            ClinicalValue::Text(t) => t.trim().parse().ok(),
        }
    }

    /// Category label; numbers render through `Display`.
    pub fn as_category(&self) -> String {
        match self {
            ClinicalValue::Number(v) => v.to_string(),
            ClinicalValue::Text(t) => t.trim().to_string(),
        }
    }
}

impl std::fmt::Display for ClinicalValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ClinicalValue::Number(v) => write!(f, "{v}"),
            ClinicalValue::Text(t) => f.write_str(t),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub clinical: BTreeMap<String, ClinicalValue>,
    pub radiomic: Vec<f64>,
    pub label: u8,
}

impl PatientRecord {
    /// Checks field presence against `schema`, radiomic length and label.
    /// Returns the names of every missing field in the error.
    pub fn validate(&self, schema: &ClinicalSchema) -> Result<()> {
        let missing = missing_fields(&self.clinical, schema);
        if !missing.is_empty() {
            return Err(Error::Schema(format!(
                "patient {}: missing clinical field(s): {}",
                self.patient_id,
                missing.join(", ")
            )));
        }
        let extra: Vec<&str> = self
            .clinical
            .keys()
            .filter(|k| schema.position(k).is_none())
            .map(String::as_str)
            .collect();
        if !extra.is_empty() {
            return Err(Error::Schema(format!(
                "patient {}: unknown clinical field(s): {}",
                self.patient_id,
                extra.join(", ")
            )));
        }
        if self.radiomic.len() != RADIOMIC_FEATURES {
            return Err(Error::Schema(format!(
                "patient {}: {} radiomic values, expected {RADIOMIC_FEATURES}",
                self.patient_id,
                self.radiomic.len()
            )));
        }
        if self.label > 1 {
            return Err(Error::Schema(format!(
                "patient {}: label {} is not binary",
                self.patient_id, self.label
            )));
        }
        Ok(())
    }
}

pub fn missing_fields(clinical: &BTreeMap<String, ClinicalValue>, schema: &ClinicalSchema) -> Vec<String> {
    schema
        .names()
        .filter(|n| !clinical.contains_key(*n))
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Input(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<PatientRecord>,
    pub val: Vec<PatientRecord>,
    pub test: Vec<PatientRecord>,
}

impl DatasetSplit {
    pub fn get(&self, name: SplitName) -> &[PatientRecord] {
        match name {
            SplitName::Train => &self.train,
            SplitName::Val => &self.val,
            SplitName::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (SplitName, &PatientRecord)> {
        self.train
            .iter()
            .map(|r| (SplitName::Train, r))
            .chain(self.val.iter().map(|r| (SplitName::Val, r)))
            .chain(self.test.iter().map(|r| (SplitName::Test, r)))
    }

    /// Fails if any patient id appears twice across or within splits.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let dupes: Vec<&str> = self
            .iter()
            .filter(|(_, r)| !seen.insert(r.patient_id.as_str()))
            .map(|(_, r)| r.patient_id.as_str())
            .collect();
        if dupes.is_empty() {
            Ok(())
        } else {
            Err(Error::Ingestion(format!(
                "patient ids shared between splits: {}",
                dupes.join(", ")
            )))
        }
    }
}

pub fn positive_rate(records: &[PatientRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label == 1).count() as f64 / records.len() as f64
}
