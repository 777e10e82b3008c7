use std::sync::{Arc, OnceLock};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{Ablation, FusionWeights, MiracleConfig};
use super::fusion::{fuse_rows_broadcast, normalize_rows};
use crate::data::{FeatureCodec, PatientRecord};
use crate::error::{Error, Result};
use crate::remarks::{
    embed_remark, fnv1a, hex_string, FrozenProjection, HashingEmbedder, Remark, RemarkEmbedder,
    EMBEDDING_DIM,
};
use crate::scalar::{sigmoid, Scalar};
use crate::variational::{BayesianMlp, MlpGrads, MlpSpec, OutputVariance};

const INIT_TAG: u64 = 1;
const ENCODER_STREAM: u64 = 0;
const CLASSIFIER_STREAM: u64 = 1;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a tag path.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(mix(base), |acc, &t| mix(acc ^ mix(t)))
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-sample channel embeddings behind one prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEmbeddings<T: Scalar> {
    /// `[mc_samples, 768]`, one row per posterior draw.
    pub clinical: Array2<T>,
    pub radiomic: Option<Array2<T>>,
    /// Deterministic remark embedding (the text encoder is frozen).
    pub remark: Option<Array1<T>>,
}

impl<T: Scalar> ChannelEmbeddings<T> {
    pub fn clinical_mean(&self) -> Array1<T> {
        self.clinical.mean_axis(Axis(0)).expect("nonempty")
    }

    pub fn radiomic_mean(&self) -> Option<Array1<T>> {
        self.radiomic.as_ref().map(|r| r.mean_axis(Axis(0)).expect("nonempty"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult<T: Scalar> {
    pub patient_id: String,
    /// Mean of the per-sample probabilities.
    pub probability: f64,
    /// Population stddev of the per-sample probabilities.
    pub mc_std: f64,
    pub sample_probabilities: Vec<f64>,
    pub remark: Remark,
    pub embeddings: ChannelEmbeddings<T>,
    /// Seed both sampling streams were derived from.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub(crate) struct VarianceCache<T: Scalar> {
    pub clinical: Vec<OutputVariance<T>>,
    pub radiomic: Option<Vec<OutputVariance<T>>>,
    pub classifier: Vec<OutputVariance<T>>,
}

/// Serializable parameter set of all trainable networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Networks<T: Scalar> {
    pub clinical: BayesianMlp<T>,
    pub radiomic: Option<BayesianMlp<T>>,
    pub classifier: BayesianMlp<T>,
}

impl<T: Scalar> Networks<T> {
    pub fn iter(&self) -> impl Iterator<Item = &BayesianMlp<T>> {
        std::iter::once(&self.clinical)
            .chain(self.radiomic.iter())
            .chain(std::iter::once(&self.classifier))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut BayesianMlp<T>> {
        std::iter::once(&mut self.clinical)
            .chain(self.radiomic.iter_mut())
            .chain(std::iter::once(&mut self.classifier))
    }

    pub fn total_kl(&self) -> T {
        self.iter()
            .fold(T::zero(), |a, n| a + n.kl_to_standard_normal())
    }

    pub fn num_params(&self) -> usize {
        self.iter().map(|n| n.num_params()).sum()
    }

    /// SHA-256 over every parameter in a fixed order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for net in self.iter() {
            for layer in &net.layers {
                for s in layer.param_slices() {
                    buf.clear();
                    for &v in s {
                        v.write_le(&mut buf);
                    }
                    h.update(&buf);
                }
            }
        }
        hex_string(&h.finalize())
    }
}

/// Gradients matching [`Networks`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGrads<T: Scalar> {
    pub clinical: MlpGrads<T>,
    pub radiomic: Option<MlpGrads<T>>,
    pub classifier: MlpGrads<T>,
}

impl<T: Scalar> NetworkGrads<T> {
    pub fn zeros_like(nets: &Networks<T>) -> Self {
        Self {
            clinical: MlpGrads::zeros_like(&nets.clinical),
            radiomic: nets.radiomic.as_ref().map(MlpGrads::zeros_like),
            classifier: MlpGrads::zeros_like(&nets.classifier),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &MlpGrads<T>> {
        std::iter::once(&self.clinical)
            .chain(self.radiomic.iter())
            .chain(std::iter::once(&self.classifier))
    }
}

/// The assembled model: encoders, frozen remark channel, fusion and classifier.
#[derive(Clone)]
pub struct MiracleModel<T: Scalar> {
    pub(crate) config: MiracleConfig,
    pub(crate) codec: FeatureCodec,
    pub(crate) nets: Networks<T>,
    pub(crate) fusion: FusionWeights,
    projection: Arc<FrozenProjection>,
    embedder: Arc<dyn RemarkEmbedder>,
    variances: OnceLock<Arc<VarianceCache<T>>>,
}

impl<T: Scalar> std::fmt::Debug for MiracleModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MiracleModel")
            .field("scalar", &T::NAME)
            .field("ablation", &self.config.ablation)
            .field("fusion", &self.fusion)
            .field("params", &self.nets.num_params())
            .field("embedder", &self.embedder.name())
            .finish()
    }
}

pub(crate) fn network_specs(config: &MiracleConfig, codec: &FeatureCodec) -> [MlpSpec; 3] {
    let tune = |mut s: MlpSpec| {
        s.dropout_rate = config.dropout;
        s.mc_samples = config.mc_samples;
        s.kl_weight = config.kl_weight;
        s
    };
    let mut classifier = config.classifier_hidden.clone();
    classifier.push(1);
    [
        tune(MlpSpec::new(codec.clinical_dim(), config.clinical_dims.clone())),
        tune(MlpSpec::new(codec.radiomic_dim(), config.radiomic_dims.clone())),
        tune(MlpSpec::new(config.embedding_dim, classifier)),
    ]
}

impl<T: Scalar> MiracleModel<T> {
    /// Fresh model with seeded initialization.
    pub fn init(config: MiracleConfig, codec: FeatureCodec) -> Result<Self> {
        config.validate()?;
        let [c, r, k] = network_specs(&config, &codec);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[INIT_TAG]));
        let clinical = BayesianMlp::init(c, &mut rng)?;
        let radiomic = if config.ablation.uses_radiomic() {
            Some(BayesianMlp::init(r, &mut rng)?)
        } else {
            None
        };
        let classifier = BayesianMlp::init(k, &mut rng)?;
        Self::from_parts(
            config,
            codec,
            Networks {
                clinical,
                radiomic,
                classifier,
            },
        )
    }

    /// Assembles a model from stored parameters, checking every shape.
    pub fn from_parts(config: MiracleConfig, codec: FeatureCodec, nets: Networks<T>) -> Result<Self> {
        config.validate()?;
        let [c, r, k] = network_specs(&config, &codec);
        let check = |net: &BayesianMlp<T>, spec: &MlpSpec, name: &str| -> Result<()> {
            BayesianMlp::from_layers(spec.clone(), net.layers.clone())
                .map(|_| ())
                .map_err(|e| Error::Shape(format!("{name} network: {e}")))
        };
        check(&nets.clinical, &c, "clinical")?;
        check(&nets.classifier, &k, "classifier")?;
        match (&nets.radiomic, config.ablation.uses_radiomic()) {
            (Some(net), true) => check(net, &r, "radiomic")?,
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Shape(format!(
                    "radiomic encoder present under {}",
                    config.ablation
                )))
            }
            (None, true) => {
                return Err(Error::Shape(format!(
                    "radiomic encoder missing under {}",
                    config.ablation
                )))
            }
        }
        let fusion = config.effective_fusion()?;
        let projection = Arc::new(FrozenProjection::new(config.projection_seed));
        let embedder: Arc<dyn RemarkEmbedder> = Arc::new(HashingEmbedder::new(config.hash_seed));
        Ok(Self {
            config,
            codec,
            nets,
            fusion,
            projection,
            embedder,
            variances: OnceLock::new(),
        })
    }

    /// Swaps the remark text encoder (e.g. for an external service).
    pub fn with_embedder(mut self, embedder: Arc<dyn RemarkEmbedder>) -> Result<Self> {
        if embedder.dim() != EMBEDDING_DIM {
            return Err(Error::Config(format!(
                "embedder {} has dimension {}, expected {EMBEDDING_DIM}",
                embedder.name(),
                embedder.dim()
            )));
        }
        self.embedder = embedder;
        Ok(self)
    }

    pub fn config(&self) -> &MiracleConfig {
        &self.config
    }

    pub fn codec(&self) -> &FeatureCodec {
        &self.codec
    }

    pub fn networks(&self) -> &Networks<T> {
        &self.nets
    }

    pub fn fusion_weights(&self) -> FusionWeights {
        self.fusion
    }

    pub fn ablation(&self) -> Ablation {
        self.config.ablation
    }

    pub fn projection(&self) -> &FrozenProjection {
        &self.projection
    }

    pub fn embedder_name(&self) -> &str {
        self.embedder.name()
    }

    pub fn parameter_checksum(&self) -> String {
        self.nets.checksum()
    }

    /// Mutable access to the parameters; drops cached posterior variances.
    pub fn networks_mut(&mut self) -> &mut Networks<T> {
        self.variances = OnceLock::new();
        &mut self.nets
    }

    /// Overrides the fusion weights in effect (ablation rules still apply).
    pub fn set_fusion(&mut self, weights: FusionWeights) -> Result<()> {
        let effective = weights.effective(self.config.ablation)?;
        self.config.fusion = weights;
        self.fusion = effective;
        Ok(())
    }

    fn variance_cache(&self) -> Arc<VarianceCache<T>> {
        self.variances
            .get_or_init(|| {
                Arc::new(VarianceCache {
                    clinical: self.nets.clinical.output_variances(),
                    radiomic: self.nets.radiomic.as_ref().map(|n| n.output_variances()),
                    classifier: self.nets.classifier.output_variances(),
                })
            })
            .clone()
    }

    /// Default per-request seed: the configured seed mixed with a hash of
    /// the patient id.
    pub fn request_seed(&self, patient_id: &str) -> u64 {
        derive_seed(self.config.seed, &[fnv1a(patient_id.as_bytes(), 0)])
    }

    /// Remark embedding after the frozen projection, as a model vector.
    pub fn embed_remark_vector(&self, remark: &Remark) -> Result<Array1<T>> {
        let e = embed_remark(remark, self.embedder.as_ref(), &self.projection)?;
        Ok(e.vector.into_iter().map(T::lit).collect())
    }

    pub(crate) fn encode_inputs(&self, record: &PatientRecord) -> Result<(Array1<T>, Array1<T>)> {
        let e = self.codec.encode(record)?;
        Ok((
            e.clinical.into_iter().map(T::lit).collect(),
            e.radiomic.into_iter().map(T::lit).collect(),
        ))
    }

    pub fn predict(&self, record: &PatientRecord, remark: &Remark) -> Result<PredictionResult<T>> {
        self.predict_with_seed(record, remark, self.request_seed(&record.patient_id))
    }

    /// Encodes, embeds every enabled channel, fuses and runs the classifier
    /// once per MC sample. Dropout is inactive; each sample draws
    /// pre-activations from the posterior predictive of every layer.
    pub fn predict_with_seed(
        &self,
        record: &PatientRecord,
        remark: &Remark,
        seed: u64,
    ) -> Result<PredictionResult<T>> {
        let (xc, xr) = self.encode_inputs(record)?;
        let cache = self.variance_cache();
        let s = self.config.mc_samples;
        let mut rng = stream_rng(seed, ENCODER_STREAM);
        let xc = xc.insert_axis(Axis(0));
        let xr = xr.insert_axis(Axis(0));
        let mut clinical = Array2::zeros((s, EMBEDDING_DIM));
        let mut radiomic = self
            .nets
            .radiomic
            .as_ref()
            .map(|_| Array2::zeros((s, EMBEDDING_DIM)));
        for i in 0..s {
            let ec = self
                .nets
                .clinical
                .sample_local(&cache.clinical, xc.view(), &mut rng)?;
            clinical.row_mut(i).assign(&ec.row(0));
            if let (Some(net), Some(out), Some(sc)) =
                (&self.nets.radiomic, radiomic.as_mut(), cache.radiomic.as_ref())
            {
                let er = net.sample_local(sc, xr.view(), &mut rng)?;
                out.row_mut(i).assign(&er.row(0));
            }
        }
        let remark_vec = if self.config.ablation.uses_remark() {
            Some(self.embed_remark_vector(remark)?)
        } else {
            None
        };
        let embeddings = ChannelEmbeddings {
            clinical,
            radiomic,
            remark: remark_vec,
        };
        self.finish_prediction(record.patient_id.clone(), remark.clone(), embeddings, seed)
    }

    /// Re-embeds a clinician's edit of `prior.remark` and reruns fusion and
    /// classifier with the prior's seed. Clinical and radiomic embeddings are
    /// reused as-is.
    pub fn intervene(&self, prior: &PredictionResult<T>, edited_text: &str) -> Result<PredictionResult<T>> {
        if !self.config.ablation.uses_remark() {
            return Err(Error::Unsupported(format!(
                "model trained as {} has no remark channel",
                self.config.ablation
            )));
        }
        if edited_text.trim().is_empty() {
            return Err(Error::Input("edited remark is empty".into()));
        }
        let remark = prior.remark.edited(edited_text)?;
        let mut embeddings = prior.embeddings.clone();
        embeddings.remark = Some(self.embed_remark_vector(&remark)?);
        self.finish_prediction(prior.patient_id.clone(), remark, embeddings, prior.seed)
    }

    fn finish_prediction(
        &self,
        patient_id: String,
        remark: Remark,
        embeddings: ChannelEmbeddings<T>,
        seed: u64,
    ) -> Result<PredictionResult<T>> {
        let fused = self.fuse_embeddings(&embeddings);
        let sample_probabilities = self.classify_samples(fused.view(), seed)?;
        let n = sample_probabilities.len() as f64;
        let probability = sample_probabilities.iter().sum::<f64>() / n;
        let mc_std = (sample_probabilities
            .iter()
            .map(|p| (p - probability).powi(2))
            .sum::<f64>()
            / n)
            .sqrt();
        Ok(PredictionResult {
            patient_id,
            probability,
            mc_std,
            sample_probabilities,
            remark,
            embeddings,
            seed,
        })
    }

    pub(crate) fn fuse_embeddings(&self, e: &ChannelEmbeddings<T>) -> Array2<T> {
        if self.config.normalize_embeddings {
            let mut c = e.clinical.clone();
            normalize_rows(&mut c);
            let r = e.radiomic.clone().map(|mut r| {
                normalize_rows(&mut r);
                r
            });
            let m = e.remark.clone().map(|m| {
                let mut m2 = m.insert_axis(Axis(0));
                normalize_rows(&mut m2);
                m2.index_axis_move(Axis(0), 0)
            });
            fuse_rows_broadcast(c.view(), r.as_ref().map(|r| r.view()), m.as_ref().map(|m| m.view()), &self.fusion)
        } else {
            fuse_rows_broadcast(
                e.clinical.view(),
                e.radiomic.as_ref().map(|r| r.view()),
                e.remark.as_ref().map(|m| m.view()),
                &self.fusion,
            )
        }
    }

    /// One classifier draw per fused row, all from the classifier stream.
    fn classify_samples(&self, fused: ArrayView2<'_, T>, seed: u64) -> Result<Vec<f64>> {
        let cache = self.variance_cache();
        let mut rng = stream_rng(seed, CLASSIFIER_STREAM);
        let mut out = Vec::with_capacity(fused.nrows());
        for row in fused.axis_iter(Axis(0)) {
            let x = row.insert_axis(Axis(0));
            let logit = self
                .nets
                .classifier
                .sample_local(&cache.classifier, x, &mut rng)?;
            out.push(sigmoid(logit[[0, 0]]).as_f64());
        }
        Ok(out)
    }
}
