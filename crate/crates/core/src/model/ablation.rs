use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Ablation, MiracleConfig};
use super::train::{evaluate, train, RemarkTable, TrainingHistory};
use crate::data::{DatasetSplit, FeatureCodec};
use crate::error::{Error, Result};
use crate::objectives::EvalReport;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: Ablation,
    pub seed: u64,
    pub best_epoch: usize,
    pub val_auc: f64,
    pub test: EvalReport,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn rows_for(&self, mode: Ablation) -> impl Iterator<Item = &AblationRow> {
        self.rows.iter().filter(move |r| r.mode == mode)
    }

    /// Median test AUC over the seeds run for `mode`.
    pub fn median_auc(&self, mode: Ablation) -> Option<f64> {
        let mut v: Vec<f64> = self.rows_for(mode).map(|r| r.test.auc).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 {
            v[n / 2]
        } else {
            (v[n / 2 - 1] + v[n / 2]) / 2.0
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["mode", "seed", "best_epoch", "val_auc", "test_auc", "tpr_at_fpr_0.2", "tpr_at_fpr_0.3"])?;
        for r in &self.rows {
            let tpr = |c: f64| r.test.tpr_at(c).map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.mode.to_string(),
                r.seed.to_string(),
                r.best_epoch.to_string(),
                r.val_auc.to_string(),
                r.test.auc.to_string(),
                tpr(0.2),
                tpr(0.3),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<ablation>", e))
    }

    pub fn save(&self, json_path: &Path, csv_path: &Path) -> Result<()> {
        std::fs::write(json_path, serde_json::to_vec_pretty(self)?)
            .map_err(|e| Error::io(json_path, e))?;
        let f = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(f)
    }
}

/// Trains and tests one model per `(mode, seed)` with otherwise identical
/// settings.
pub fn ablate<T: Scalar>(
    base: &MiracleConfig,
    codec: &FeatureCodec,
    data: &DatasetSplit,
    remarks: &RemarkTable,
    modes: &[Ablation],
    seeds: &[u64],
    fpr_caps: &[f64],
) -> Result<AblationTable> {
    let mut table = AblationTable::default();
    for &mode in modes {
        for &seed in seeds {
            let config = MiracleConfig {
                ablation: mode,
                seed,
                ..base.clone()
            };
            log::info!("ablation: training {mode} with seed {seed}");
            let out = train::<T>(config, codec.clone(), &data.train, &data.val, remarks)?;
            let (_, test) = evaluate(&out.model, &data.test, remarks, fpr_caps)?;
            table.rows.push(AblationRow {
                mode,
                seed,
                best_epoch: out.history.best_epoch,
                val_auc: out.history.best_val_auc,
                test,
                history: out.history,
            });
        }
    }
    Ok(table)
}
