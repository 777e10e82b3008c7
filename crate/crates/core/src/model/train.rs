use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionWeights, MiracleConfig};
use super::fusion::{fuse_rows, normalize_rows, normalize_rows_backward};
use super::network::{derive_seed, MiracleModel, NetworkGrads, Networks, PredictionResult};
use crate::data::{FeatureCodec, PatientRecord};
use crate::error::{Error, Result};
use crate::objectives::{batch_objective, focal_loss_grad, EvalReport};
use crate::remarks::{summarize, KnowledgeBank, PromptTemplate, Remark, RemarkGenerator, RemarkOrigin};
use crate::scalar::{sigmoid, Scalar};

const SHUFFLE_TAG: u64 = 2;
const STEP_TAG: u64 = 3;

/// Remarks keyed by patient id.
pub type RemarkTable = BTreeMap<String, Remark>;

/// Generates one remark per record from its clinical summary.
pub fn generate_remarks(
    records: &[PatientRecord],
    codec: &FeatureCodec,
    generator: &dyn RemarkGenerator,
    bank: &KnowledgeBank,
    prompt: &PromptTemplate,
) -> Result<RemarkTable> {
    records
        .iter()
        .map(|r| {
            let summary = summarize(&codec.schema, &r.clinical)?;
            Ok((r.patient_id.clone(), generator.generate(&summary, bank, prompt)?))
        })
        .collect()
}

fn remark_for<'a>(remarks: &'a RemarkTable, id: &str) -> Result<&'a Remark> {
    remarks
        .get(id)
        .ok_or_else(|| Error::Input(format!("no remark for patient {id}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches of the MC-averaged focal loss plus the KL term.
    pub train_loss: f64,
    pub val_auc: f64,
    /// Wall-clock; not persisted.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["epoch", "train_loss", "val_auc", "seconds"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.train_loss.to_string(),
                e.val_auc.to_string(),
                format!("{:.3}", e.seconds),
            ])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<history>".into(),
            source: e,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(f)
    }
}

pub struct TrainOutcome<T: Scalar> {
    /// Parameters from the epoch with the best validation AUC.
    pub model: MiracleModel<T>,
    pub history: TrainingHistory,
}

/// Encoded inputs for a set of records.
struct Prepared<T: Scalar> {
    clinical: Array2<T>,
    radiomic: Array2<T>,
    remark: Option<Array2<T>>,
    labels: Vec<u8>,
}

fn prepare<T: Scalar>(
    model: &MiracleModel<T>,
    records: &[PatientRecord],
    remarks: &RemarkTable,
) -> Result<Prepared<T>> {
    let n = records.len();
    let codec = model.codec();
    let mut clinical = Array2::zeros((n, codec.clinical_dim()));
    let mut radiomic = Array2::zeros((n, codec.radiomic_dim()));
    let mut remark = model
        .ablation()
        .uses_remark()
        .then(|| Array2::zeros((n, model.config().embedding_dim)));
    for (i, r) in records.iter().enumerate() {
        let (c, x) = model.encode_inputs(r)?;
        clinical.row_mut(i).assign(&c);
        radiomic.row_mut(i).assign(&x);
        if let Some(m) = remark.as_mut() {
            m.row_mut(i)
                .assign(&model.embed_remark_vector(remark_for(remarks, &r.patient_id)?)?);
        }
    }
    Ok(Prepared {
        clinical,
        radiomic,
        remark,
        labels: records.iter().map(|r| r.label).collect(),
    })
}

/// Adam with bias correction over every parameter slice in network order.
struct Adam<T: Scalar> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    fn new(config: &MiracleConfig, nets: &Networks<T>) -> Self {
        let sizes: Vec<usize> = nets
            .iter()
            .flat_map(|n| n.layers.iter())
            .flat_map(|l| l.param_slices().map(|s| s.len()))
            .collect();
        let o = &config.optimizer;
        Self {
            lr: T::lit(o.learning_rate),
            beta1: T::lit(o.beta1),
            beta2: T::lit(o.beta2),
            eps: T::lit(o.epsilon),
            t: 0,
            m: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    fn step(&mut self, nets: &mut Networks<T>, grads: &NetworkGrads<T>) {
        self.t += 1;
        let c1 = T::one() - self.beta1.powi(self.t);
        let c2 = T::one() - self.beta2.powi(self.t);
        let params = nets
            .iter_mut()
            .flat_map(|n| n.layers.iter_mut())
            .flat_map(|l| l.param_slices_mut());
        let gs = grads
            .iter()
            .flat_map(|g| g.layers.iter())
            .flat_map(|l| l.slices());
        for (((p, g), m), v) in params.zip(gs).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Loss and gradients of one mini-batch, averaged over `mc_samples` draws.
fn batch_step<T: Scalar>(
    model: &MiracleModel<T>,
    data: &Prepared<T>,
    idx: &[usize],
    seed: u64,
) -> Result<(f64, NetworkGrads<T>)> {
    let cfg = model.config();
    let nets = model.networks();
    let w = model.fusion_weights();
    let s_count = cfg.mc_samples;
    let b = idx.len();
    let xc = data.clinical.select(Axis(0), idx);
    let xr = data.radiomic.select(Axis(0), idx);
    let xm = data.remark.as_ref().map(|m| m.select(Axis(0), idx));
    let ys: Vec<u8> = idx.iter().map(|&i| data.labels[i]).collect();

    let sc = nets.clinical.scales();
    let sr = nets.radiomic.as_ref().map(|n| n.scales());
    let sk = nets.classifier.scales();
    let mut grads = NetworkGrads::zeros_like(nets);
    let denom = T::lit((b * s_count) as f64);
    let mut focal_sum = 0.0;

    for s in 0..s_count {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[s as u64]));
        let (mut ec, tc) = nets.clinical.forward_with_scales(&sc, xc.view(), &mut rng, true)?;
        let mut er = match (&nets.radiomic, &sr) {
            (Some(net), Some(scales)) => Some(net.forward_with_scales(scales, xr.view(), &mut rng, true)?),
            _ => None,
        };
        let mut em = xm.clone();
        let mut norms = (Vec::new(), Vec::new());
        if cfg.normalize_embeddings {
            norms.0 = normalize_rows(&mut ec);
            if let Some((e, _)) = er.as_mut() {
                norms.1 = normalize_rows(e);
            }
            if let Some(m) = em.as_mut() {
                normalize_rows(m);
            }
        }
        let fused = fuse_rows(
            ec.view(),
            er.as_ref().map(|(e, _)| e.view()),
            em.as_ref().map(|m| m.view()),
            &w,
        );
        let (logits, tk) = nets.classifier.forward_with_scales(&sk, fused.view(), &mut rng, true)?;
        let logits = logits.column(0).to_owned();
        let probs: Vec<T> = logits.iter().map(|&z| sigmoid(z)).collect();
        focal_sum += batch_objective(&probs, &ys, &cfg.focal, T::zero(), T::zero())?.as_f64();
        let mut dlogit = Array2::zeros((b, 1));
        for (i, (&z, &y)) in logits.iter().zip(&ys).enumerate() {
            dlogit[[i, 0]] = focal_loss_grad(z, y, &cfg.focal)? / denom;
        }
        let (gk, dfused) = nets.classifier.backward_with_scales(&sk, &tk, dlogit.view())?;
        grads.classifier.add_assign(&gk);

        let mut dc = dfused.mapv(|v| v * T::lit(w.clinical));
        if cfg.normalize_embeddings {
            normalize_rows_backward(ec.view(), &norms.0, &mut dc);
        }
        let (gc, _) = nets.clinical.backward_with_scales(&sc, &tc, dc.view())?;
        grads.clinical.add_assign(&gc);

        if let (Some(net), Some(scales), Some((e, tr)), Some(g)) =
            (&nets.radiomic, &sr, &er, grads.radiomic.as_mut())
        {
            let mut dr = dfused.mapv(|v| v * T::lit(w.radiomic));
            if cfg.normalize_embeddings {
                normalize_rows_backward(e.view(), &norms.1, &mut dr);
            }
            let (gr, _) = net.backward_with_scales(scales, tr, dr.view())?;
            g.add_assign(&gr);
        }
    }

    let lambda = T::lit(cfg.kl_weight);
    nets.clinical.accumulate_kl_grad(&mut grads.clinical, lambda);
    if let (Some(net), Some(g)) = (&nets.radiomic, grads.radiomic.as_mut()) {
        net.accumulate_kl_grad(g, lambda);
    }
    nets.classifier.accumulate_kl_grad(&mut grads.classifier, lambda);
    let loss = focal_sum / s_count as f64 + cfg.kl_weight * nets.total_kl().as_f64();
    Ok((loss, grads))
}

/// Predicts every record with its own remark and per-request seed. Models
/// without a remark channel accept an empty table.
pub fn predict_all<T: Scalar>(
    model: &MiracleModel<T>,
    records: &[PatientRecord],
    remarks: &RemarkTable,
) -> Result<Vec<PredictionResult<T>>> {
    let unused = Remark::new("(remark channel disabled)", RemarkOrigin::Stub, "none")?;
    records
        .iter()
        .map(|r| match remarks.get(&r.patient_id) {
            Some(remark) => model.predict(r, remark),
            None if !model.ablation().uses_remark() => model.predict(r, &unused),
            None => Err(Error::Input(format!("no remark for patient {}", r.patient_id))),
        })
        .collect()
}

/// Predictions plus AUC, TPR at each FPR cap, and the ROC curve.
pub fn evaluate<T: Scalar>(
    model: &MiracleModel<T>,
    records: &[PatientRecord],
    remarks: &RemarkTable,
    fpr_caps: &[f64],
) -> Result<(Vec<PredictionResult<T>>, EvalReport)> {
    let preds = predict_all(model, records, remarks)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = records.iter().map(|r| r.label).collect();
    let report = EvalReport::compute(&scores, &labels, fpr_caps)?;
    Ok((preds, report))
}

fn val_auc<T: Scalar>(model: &MiracleModel<T>, val: &[PatientRecord], remarks: &RemarkTable) -> Result<f64> {
    let preds = predict_all(model, val, remarks)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.probability).collect();
    let labels: Vec<u8> = val.iter().map(|r| r.label).collect();
    crate::objectives::auc(&scores, &labels)
}

/// Trains a fresh model with Adam and early stopping on validation AUC.
pub fn train<T: Scalar>(
    config: MiracleConfig,
    codec: FeatureCodec,
    train_set: &[PatientRecord],
    val_set: &[PatientRecord],
    remarks: &RemarkTable,
) -> Result<TrainOutcome<T>> {
    let model = MiracleModel::init(config, codec)?;
    train_from(model, train_set, val_set, remarks)
}

/// Continues training `model` in place of a fresh initialization.
pub fn train_from<T: Scalar>(
    mut model: MiracleModel<T>,
    train_set: &[PatientRecord],
    val_set: &[PatientRecord],
    remarks: &RemarkTable,
) -> Result<TrainOutcome<T>> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Input("training and validation splits must be nonempty".into()));
    }
    let data = prepare(&model, train_set, remarks)?;
    let cfg = model.config().clone();
    let opt = &cfg.optimizer;
    let mut adam = Adam::new(&cfg, model.networks());
    let mut history = TrainingHistory {
        best_val_auc: f64::NEG_INFINITY,
        ..TrainingHistory::default()
    };
    let mut best: Option<Networks<T>> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=opt.max_epochs {
        let started = Instant::now();
        let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        order.shuffle(&mut shuffle);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (b, idx) in order.chunks(opt.batch_size).enumerate() {
            let seed = derive_seed(cfg.seed, &[STEP_TAG, epoch as u64, b as u64]);
            let (loss, grads) = batch_step(&model, &data, idx, seed)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("loss became {loss} at batch {b}"),
                });
            }
            adam.step(model.networks_mut(), &grads);
            loss_sum += loss;
            batches += 1;
        }
        let auc = val_auc(&model, val_set, remarks)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_auc: auc,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val auc {:.4} ({:.1}s)",
            record.train_loss,
            record.val_auc,
            record.seconds
        );
        history.epochs.push(record);
        if auc > history.best_val_auc {
            history.best_val_auc = auc;
            history.best_epoch = epoch;
            best = Some(model.networks().clone());
        } else if epoch - history.best_epoch >= opt.patience {
            history.stopped_early = epoch < opt.max_epochs;
            break;
        }
    }
    if let Some(nets) = best {
        *model.networks_mut() = nets;
    }
    Ok(TrainOutcome { model, history })
}


/// Validation AUC of a trained model under every fusion-weight triple on a
/// simplex grid with spacing `step`, best first. Triples that leave every
/// enabled channel at zero are skipped.
pub fn fusion_grid_search<T: Scalar>(
    model: &MiracleModel<T>,
    val: &[PatientRecord],
    remarks: &RemarkTable,
    step: f64,
) -> Result<Vec<(FusionWeights, f64)>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Config(format!("grid step {step} not in (0,1]")));
    }
    let n = (1.0 / step).round() as usize;
    let mut probe = model.clone();
    let mut out = Vec::new();
    for i in 0..=n {
        for j in 0..=n - i {
            let k = n - i - j;
            let w = FusionWeights::new(i as f64 / n as f64, j as f64 / n as f64, k as f64 / n as f64);
            let Ok(eff) = w.effective(model.ablation()) else { continue };
            if eff != w {
                continue;
            }
            probe.set_fusion(w)?;
            out.push((w, val_auc(&probe, val, remarks)?));
        }
    }
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(out)
}
