//! Synthetic cohort generator with a planted logistic outcome model.
//!
//! Clinical fields follow the stand-in schema with plausible ranges.
//! Radiomic vectors come from an 8-factor Gaussian model: every feature is
//! `offset + scale * (loadings · f + noise)`, with the first 20 features also
//! tracking log tumor size. Loadings, offsets and scales are drawn once from
//! [`WORLD_SEED`], so every cohort seed samples patients from the same world.
//!
//! The outcome is Bernoulli(sigmoid(logit)) with
//!
//! ```text
//! logit = INTERCEPT + SIGNAL_SCALE * (clinical_term + radiomic_term)
//! clinical_term = 1.2 z(age) + 0.9 z(pack_years) - 1.4 z(fev1) - 1.8 z(dlco)
//!               - 0.5 z(albumin) + 0.6 z(charlson)
//!               + 0.8 [ASA >= 3] + 0.7 [open approach] + 0.5 [current smoker]
//! radiomic_term = 1.9 f0 - 1.5 f1 + 1.1 f2
//! ```
//!
//! where `z(.)` standardizes with fixed population constants. Each split is
//! filled by rejection until its positive and negative quotas are met.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::record::{ClinicalValue, DatasetSplit, PatientRecord, RADIOMIC_FEATURES};
use crate::error::{Error, Result};

pub const WORLD_SEED: u64 = 0x4d49_5241_434c_45;
pub const LATENT_FACTORS: usize = 8;
pub const SIGNAL_SCALE: f64 = 2.5;
pub const INTERCEPT: f64 = -1.5;
const TUMOR_TRACKING_FEATURES: usize = 20;
const RADIOMIC_NOISE: f64 = 0.5;

pub const DEFAULT_SIZES: [usize; 3] = [2694, 200, 200];
pub const DEFAULT_PREVALENCES: [f64; 3] = [0.226, 0.475, 0.535];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Train, validation and test sizes.
    pub sizes: [usize; 3],
    /// Target positive rate per split.
    pub prevalences: [f64; 3],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sizes: DEFAULT_SIZES,
            prevalences: DEFAULT_PREVALENCES,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, (&n, &p)) in self.sizes.iter().zip(&self.prevalences).enumerate() {
            if n == 0 {
                return Err(Error::Config(format!("split {i} has size 0")));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("prevalence {p} outside [0,1]")));
            }
        }
        Ok(())
    }

    /// `(positives, negatives)` quota per split.
    pub fn quotas(&self) -> [(usize, usize); 3] {
        let mut q = [(0, 0); 3];
        for i in 0..3 {
            let pos = (self.sizes[i] as f64 * self.prevalences[i]).round() as usize;
            q[i] = (pos, self.sizes[i] - pos);
        }
        q
    }
}

/// Fixed radiomic factor structure.
struct World {
    loadings: Vec<[f64; LATENT_FACTORS]>,
    offsets: Vec<f64>,
    scales: Vec<f64>,
}

impl World {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(WORLD_SEED);
        let mut loadings = Vec::with_capacity(RADIOMIC_FEATURES);
        let mut offsets = Vec::with_capacity(RADIOMIC_FEATURES);
        let mut scales = Vec::with_capacity(RADIOMIC_FEATURES);
        for j in 0..RADIOMIC_FEATURES {
            let mut row = [0.0; LATENT_FACTORS];
            // every factor is carried by a block of features, plus one random extra
            row[j % LATENT_FACTORS] = 0.8 + 0.4 * rng.random::<f64>();
            let extra = rng.random_range(0..LATENT_FACTORS);
            let e: f64 = StandardNormal.sample(&mut rng);
            row[extra] += 0.5 * e;
            loadings.push(row);
            offsets.push(rng.random_range(-50.0..200.0));
            scales.push(rng.random_range(-2.0f64..3.0).exp());
        }
        Self {
            loadings,
            offsets,
            scales,
        }
    }
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let m = 10f64.powi(decimals);
    (v * m).round() / m
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal").sample(rng)
}

fn pick<'a>(rng: &mut ChaCha8Rng, options: &[(&'a str, f64)]) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for &(name, p) in options {
        acc += p;
        if u < acc {
            return name;
        }
    }
    options.last().expect("nonempty").0
}

const STAGES: [(&str, f64); 6] = [
    ("IA", 0.35),
    ("IB", 0.20),
    ("IIA", 0.12),
    ("IIB", 0.13),
    ("IIIA", 0.15),
    ("IIIB", 0.05),
];

struct Candidate {
    clinical: BTreeMap<String, ClinicalValue>,
    radiomic: Vec<f64>,
    logit: f64,
}

fn draw_candidate(rng: &mut ChaCha8Rng, world: &World) -> Candidate {
    let num = |v: f64| ClinicalValue::Number(v);
    let text = |s: &str| ClinicalValue::Text(s.to_string());

    let age = round_to(normal(rng, 66.0, 9.0).clamp(35.0, 90.0), 0);
    let female = rng.random::<f64>() < 0.57;
    let smoking = pick(rng, &[("never", 0.15), ("former", 0.60), ("current", 0.25)]);
    let pack_years = if smoking == "never" {
        0.0
    } else {
        round_to(normal(rng, 35.0, 18.0).clamp(1.0, 150.0), 1)
    };
    let bmi = round_to(normal(rng, 27.0, 5.0).clamp(16.0, 48.0), 1);
    let fev1 = round_to(
        (normal(rng, 84.0, 17.0) - 0.15 * (pack_years - 30.0)).clamp(25.0, 140.0),
        0,
    );
    let fvc = round_to((0.6 * fev1 + normal(rng, 42.0, 9.0)).clamp(35.0, 150.0), 0);
    let dlco = round_to(
        (normal(rng, 78.0, 17.0) - 0.2 * (pack_years - 30.0)).clamp(20.0, 140.0),
        0,
    );
    let hgb = round_to(
        normal(rng, if female { 12.9 } else { 13.8 }, 1.5).clamp(7.0, 18.0),
        1,
    );
    let albumin = round_to(normal(rng, 4.0, 0.4).clamp(2.0, 5.2), 1);
    let creatinine = round_to(normal(rng, 0.95f64.ln(), 0.25).exp().clamp(0.4, 4.0), 2);
    let heart_rate = round_to(normal(rng, 76.0, 11.0).clamp(45.0, 130.0), 0);
    let charlson = normal(rng, 1.5 + (age - 66.0) / 15.0, 1.4)
        .max(0.0)
        .round()
        .min(12.0);
    let asa_score = charlson * 0.35 + normal(rng, 0.0, 0.8);
    let asa = match asa_score {
        s if s < 0.6 => "ASA1",
        s if s < 1.6 => "ASA2",
        s if s < 2.8 => "ASA3",
        _ => "ASA4",
    };
    let stage = pick(rng, &STAGES);
    let stage_idx = STAGES.iter().position(|s| s.0 == stage).unwrap_or(0) as f64;
    let tumor = round_to(
        normal(rng, (1.5 + 0.8 * stage_idx).ln(), 0.3)
            .exp()
            .clamp(0.3, 12.0),
        1,
    );
    let approach = if stage_idx >= 4.0 {
        pick(rng, &[("open", 0.5), ("robotic", 0.15), ("vats", 0.35)])
    } else {
        pick(rng, &[("open", 0.2), ("robotic", 0.22), ("vats", 0.58)])
    };

    let mut clinical = BTreeMap::new();
    for (k, v) in [
        ("age_years", num(age)),
        ("sex", text(if female { "female" } else { "male" })),
        ("bmi", num(bmi)),
        ("smoking_status", text(smoking)),
        ("pack_years", num(pack_years)),
        ("fev1_pct_pred", num(fev1)),
        ("fvc_pct_pred", num(fvc)),
        ("dlco_pct_pred", num(dlco)),
        ("hemoglobin_g_dl", num(hgb)),
        ("albumin_g_dl", num(albumin)),
        ("creatinine_mg_dl", num(creatinine)),
        ("heart_rate_bpm", num(heart_rate)),
        ("charlson_index", num(charlson)),
        ("asa_class", text(asa)),
        ("clinical_stage", text(stage)),
        ("tumor_size_cm", num(tumor)),
        ("surgical_approach", text(approach)),
    ] {
        clinical.insert(k.to_string(), v);
    }

    let factors: [f64; LATENT_FACTORS] = std::array::from_fn(|_| StandardNormal.sample(rng));
    let z_tumor = (tumor.ln() - 1.0) / 0.6;
    let radiomic = (0..RADIOMIC_FEATURES)
        .map(|j| {
            let mut v: f64 = world.loadings[j]
                .iter()
                .zip(&factors)
                .map(|(l, f)| l * f)
                .sum();
            let e: f64 = StandardNormal.sample(rng);
            v += RADIOMIC_NOISE * e;
            if j < TUMOR_TRACKING_FEATURES {
                v += 0.6 * z_tumor;
            }
            round_to(world.offsets[j] + world.scales[j] * v, 4)
        })
        .collect();

    let z = |v: f64, m: f64, s: f64| (v - m) / s;
    let clinical_term = 1.2 * z(age, 66.0, 9.0) + 0.9 * z(pack_years, 28.0, 20.0)
        - 1.4 * z(fev1, 84.0, 17.0)
        - 1.8 * z(dlco, 78.0, 17.0)
        - 0.5 * z(albumin, 4.0, 0.4)
        + 0.6 * z(charlson, 1.6, 1.3)
        + if matches!(asa, "ASA3" | "ASA4") { 0.8 } else { 0.0 }
        + if approach == "open" { 0.7 } else { 0.0 }
        + if smoking == "current" { 0.5 } else { 0.0 };
    let radiomic_term = 1.9 * factors[0] - 1.5 * factors[1] + 1.1 * factors[2];
    Candidate {
        clinical,
        radiomic,
        logit: INTERCEPT + SIGNAL_SCALE * (clinical_term + radiomic_term),
    }
}

/// Generates a three-way split whose sizes and positive counts match the
/// configured quotas exactly. Fully determined by `config.seed`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<DatasetSplit> {
    config.validate()?;
    let world = World::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut next_id = 0usize;
    let mut splits: [Vec<PatientRecord>; 3] = Default::default();
    for (i, &(want_pos, want_neg)) in config.quotas().iter().enumerate() {
        let n = want_pos + want_neg;
        let max_draws = 1000 * n + 10_000;
        let (mut pos, mut neg) = (0, 0);
        let mut draws = 0;
        let out = &mut splits[i];
        while pos < want_pos || neg < want_neg {
            draws += 1;
            if draws > max_draws {
                return Err(Error::Config(format!(
                    "could not reach {want_pos} positives / {want_neg} negatives in split {i}"
                )));
            }
            let c = draw_candidate(&mut rng, &world);
            let p = 1.0 / (1.0 + (-c.logit).exp());
            let label = u8::from(rng.random::<f64>() < p);
            let accept = if label == 1 {
                pos < want_pos
            } else {
                neg < want_neg
            };
            if !accept {
                continue;
            }
            if label == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            next_id += 1;
            out.push(PatientRecord {
                patient_id: format!("P{next_id:05}"),
                clinical: c.clinical,
                radiomic: c.radiomic,
                label,
            });
        }
    }
    let [train, val, test] = splits;
    Ok(DatasetSplit { train, val, test })
}
