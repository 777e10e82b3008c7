use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::FocalParams;
use crate::remarks::{DEFAULT_HASH_SEED, DEFAULT_PROJECTION_SEED, EMBEDDING_DIM};
use crate::variational::{DEFAULT_DROPOUT, DEFAULT_KL_WEIGHT, DEFAULT_MC_SAMPLES};

/// Which input channels feed the fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    ClinicalOnly,
    ClinicalRadiomic,
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 3] = [
        Ablation::ClinicalOnly,
        Ablation::ClinicalRadiomic,
        Ablation::Full,
    ];

    pub fn uses_radiomic(self) -> bool {
        !matches!(self, Ablation::ClinicalOnly)
    }

    pub fn uses_remark(self) -> bool {
        matches!(self, Ablation::Full)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::ClinicalOnly => "clinical_only",
            Ablation::ClinicalRadiomic => "clinical_radiomic",
            Ablation::Full => "full",
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "clinical_only" => Ok(Ablation::ClinicalOnly),
            "clinical_radiomic" => Ok(Ablation::ClinicalRadiomic),
            "full" => Ok(Ablation::Full),
            other => Err(Error::Config(format!("unknown ablation mode {other:?}"))),
        }
    }
}

/// Weights of the clinical, radiomic and remark embeddings in the fused sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionWeights {
    pub clinical: f64,
    pub radiomic: f64,
    pub remark: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            clinical: 0.5,
            radiomic: 0.25,
            remark: 0.25,
        }
    }
}

impl FusionWeights {
    pub fn new(clinical: f64, radiomic: f64, remark: f64) -> Self {
        Self {
            clinical,
            radiomic,
            remark,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let w = [self.clinical, self.radiomic, self.remark];
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("fusion weights must be >= 0: {w:?}")));
        }
        if w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("fusion weights are all zero".into()));
        }
        Ok(())
    }

    /// Zeroes channels the ablation disables and rescales the rest to sum to 1.
    pub fn effective(&self, ablation: Ablation) -> Result<Self> {
        self.validate()?;
        let r = if ablation.uses_radiomic() { self.radiomic } else { 0.0 };
        let m = if ablation.uses_remark() { self.remark } else { 0.0 };
        let total = self.clinical + r + m;
        if total <= 0.0 {
            return Err(Error::Config(format!(
                "no enabled channel has positive weight under {ablation}"
            )));
        }
        Ok(Self {
            clinical: self.clinical / total,
            radiomic: r / total,
            remark: m / total,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-AUC improvement before stopping.
    pub patience: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiracleConfig {
    pub clinical_dims: Vec<usize>,
    pub radiomic_dims: Vec<usize>,
    /// Hidden widths of the classifier; a single-unit output is appended.
    pub classifier_hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub fusion: FusionWeights,
    pub focal: FocalParams,
    pub kl_weight: f64,
    pub mc_samples: usize,
    pub dropout: f64,
    pub ablation: Ablation,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Unit-normalize each channel embedding before fusion.
    pub normalize_embeddings: bool,
    pub hash_seed: u64,
    pub projection_seed: u64,
}

impl Default for MiracleConfig {
    fn default() -> Self {
        Self {
            clinical_dims: vec![64, 128, 256, EMBEDDING_DIM],
            radiomic_dims: vec![256, EMBEDDING_DIM],
            classifier_hidden: vec![256, 1024],
            embedding_dim: EMBEDDING_DIM,
            fusion: FusionWeights::default(),
            focal: FocalParams::default(),
            kl_weight: DEFAULT_KL_WEIGHT,
            mc_samples: DEFAULT_MC_SAMPLES,
            dropout: DEFAULT_DROPOUT,
            ablation: Ablation::Full,
            optimizer: OptimizerConfig::default(),
            seed: 0,
            normalize_embeddings: false,
            hash_seed: DEFAULT_HASH_SEED,
            projection_seed: DEFAULT_PROJECTION_SEED,
        }
    }
}

impl MiracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim != EMBEDDING_DIM {
            return Err(Error::Config(format!(
                "embedding dimension must be {EMBEDDING_DIM}, got {}",
                self.embedding_dim
            )));
        }
        for (name, dims) in [("clinical", &self.clinical_dims), ("radiomic", &self.radiomic_dims)] {
            if dims.last() != Some(&self.embedding_dim) {
                return Err(Error::Config(format!(
                    "{name} encoder must end at width {}: {dims:?}",
                    self.embedding_dim
                )));
            }
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("mc_samples must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(self.kl_weight >= 0.0) {
            return Err(Error::Config(format!("kl weight {} < 0", self.kl_weight)));
        }
        let o = &self.optimizer;
        if !(o.learning_rate >= 0.0) || o.batch_size == 0 {
            return Err(Error::Config(format!(
                "bad optimizer settings: lr {}, batch {}",
                o.learning_rate, o.batch_size
            )));
        }
        self.focal.validate()?;
        self.fusion.effective(self.ablation)?;
        Ok(())
    }

    pub fn effective_fusion(&self) -> Result<FusionWeights> {
        self.fusion.effective(self.ablation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_architecture() {
        let c = MiracleConfig::default();
        assert_eq!(c.clinical_dims, [64, 128, 256, 768]);
        assert_eq!(c.radiomic_dims, [256, 768]);
        assert_eq!(c.classifier_hidden, [256, 1024]);
        assert_eq!(c.mc_samples, 10);
        assert_eq!(c.kl_weight, 1e-6);
        assert_eq!(c.dropout, 0.3);
        assert_eq!(c.focal, FocalParams { alpha: 0.8, gamma: 4.0 });
        c.validate().unwrap();
    }

    #[test]
    fn ablation_renormalizes() {
        let w = FusionWeights::default();
        assert_eq!(w.effective(Ablation::Full).unwrap(), w);
        assert_eq!(
            w.effective(Ablation::ClinicalOnly).unwrap(),
            FusionWeights::new(1.0, 0.0, 0.0)
        );
        let cr = w.effective(Ablation::ClinicalRadiomic).unwrap();
        assert!((cr.clinical - 2.0 / 3.0).abs() < 1e-15 && cr.remark == 0.0);
        assert!((cr.clinical + cr.radiomic - 1.0).abs() < 1e-15);
        assert!(FusionWeights::new(0.0, 0.0, 1.0)
            .effective(Ablation::ClinicalRadiomic)
            .is_err());
    }

    #[test]
    fn ablation_names_roundtrip() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        }
        assert!("everything".parse::<Ablation>().is_err());
    }
}
