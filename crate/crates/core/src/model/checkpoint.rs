//! Binary checkpoint: `MIRACLE\0`, little-endian `u32` format version,
//! SHA-256 of the payload, then a JSON payload. Tensors inside the payload
//! are base64 little-endian bytes, so a save/load round trip is bit-exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::MiracleConfig;
use super::network::{MiracleModel, Networks};
use super::train::TrainingHistory;
use crate::data::FeatureCodec;
use crate::error::{Error, Result};
use crate::remarks::hex_string;
use crate::scalar::Scalar;
use crate::variational::{BayesianMlp, MlpSpec, VariationalLinear};

pub const MAGIC: &[u8; 8] = b"MIRACLE\0";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 32;

#[derive(Serialize, Deserialize)]
struct StoredLayer {
    in_dim: usize,
    out_dim: usize,
    mu_w: String,
    rho_w: String,
    mu_b: String,
    rho_b: String,
}

#[derive(Serialize, Deserialize)]
struct StoredNetwork {
    spec: MlpSpec,
    layers: Vec<StoredLayer>,
}

#[derive(Serialize, Deserialize)]
struct Payload {
    scalar: String,
    config: MiracleConfig,
    codec: FeatureCodec,
    projection_checksum: String,
    parameter_checksum: String,
    clinical: StoredNetwork,
    radiomic: Option<StoredNetwork>,
    classifier: StoredNetwork,
    history: Option<TrainingHistory>,
}

/// A loaded checkpoint: the model and, when saved after training, its history.
pub struct Checkpoint<T: Scalar> {
    pub model: MiracleModel<T>,
    pub history: Option<TrainingHistory>,
}

fn encode_tensor<T: Scalar>(values: &[T]) -> String {
    let mut buf = Vec::with_capacity(values.len() * T::BYTES);
    for &v in values {
        v.write_le(&mut buf);
    }
    B64.encode(buf)
}

fn decode_tensor<T: Scalar>(s: &str, len: usize, what: &str) -> Result<Vec<T>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| Error::Integrity(format!("{what}: {e}")))?;
    if bytes.len() != len * T::BYTES {
        return Err(Error::Integrity(format!(
            "{what}: {} bytes for {len} values",
            bytes.len()
        )));
    }
    Ok(bytes.chunks_exact(T::BYTES).map(T::read_le).collect())
}

fn store_network<T: Scalar>(net: &BayesianMlp<T>) -> StoredNetwork {
    StoredNetwork {
        spec: net.spec.clone(),
        layers: net
            .layers
            .iter()
            .map(|l| {
                let [mw, rw, mb, rb] = l.param_slices();
                StoredLayer {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    mu_w: encode_tensor(mw),
                    rho_w: encode_tensor(rw),
                    mu_b: encode_tensor(mb),
                    rho_b: encode_tensor(rb),
                }
            })
            .collect(),
    }
}

fn restore_network<T: Scalar>(s: StoredNetwork, name: &str) -> Result<BayesianMlp<T>> {
    let mut layers = Vec::with_capacity(s.layers.len());
    for (i, l) in s.layers.into_iter().enumerate() {
        let what = |t: &str| format!("{name} layer {i} {t}");
        let (o, n) = (l.out_dim, l.in_dim);
        let mat = |v: Vec<T>| Array2::from_shape_vec((o, n), v).map_err(|e| Error::Shape(e.to_string()));
        layers.push(VariationalLinear::from_parts(
            mat(decode_tensor(&l.mu_w, o * n, &what("mu_w"))?)?,
            mat(decode_tensor(&l.rho_w, o * n, &what("rho_w"))?)?,
            Array1::from(decode_tensor(&l.mu_b, o, &what("mu_b"))?),
            Array1::from(decode_tensor(&l.rho_b, o, &what("rho_b"))?),
        )?);
    }
    BayesianMlp::from_layers(s.spec, layers)
}

/// Serializes the model, including codec and config, to checkpoint bytes.
pub fn to_bytes<T: Scalar>(model: &MiracleModel<T>, history: Option<&TrainingHistory>) -> Result<Vec<u8>> {
    let nets = model.networks();
    let payload = Payload {
        scalar: T::NAME.to_string(),
        config: model.config().clone(),
        codec: model.codec().clone(),
        projection_checksum: model.projection().checksum(),
        parameter_checksum: nets.checksum(),
        clinical: store_network(&nets.clinical),
        radiomic: nets.radiomic.as_ref().map(store_network),
        classifier: store_network(&nets.classifier),
        history: history.cloned(),
    };
    let json = serde_json::to_vec(&payload)?;
    let mut out = Vec::with_capacity(HEADER_LEN + json.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&Sha256::digest(&json));
    out.extend_from_slice(&json);
    Ok(out)
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Integrity("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let json = &bytes[HEADER_LEN..];
    if Sha256::digest(json).as_slice() != &bytes[12..HEADER_LEN] {
        return Err(Error::Integrity("payload hash mismatch".into()));
    }
    let p: Payload = serde_json::from_slice(json)
        .map_err(|e| Error::Integrity(format!("payload does not parse: {e}")))?;
    if p.scalar != T::NAME {
        return Err(Error::Config(format!(
            "checkpoint holds {} parameters, loader expects {}",
            p.scalar,
            T::NAME
        )));
    }
    let nets = Networks {
        clinical: restore_network(p.clinical, "clinical")?,
        radiomic: p.radiomic.map(|n| restore_network(n, "radiomic")).transpose()?,
        classifier: restore_network(p.classifier, "classifier")?,
    };
    if nets.checksum() != p.parameter_checksum {
        return Err(Error::Integrity("parameter checksum mismatch".into()));
    }
    let model = MiracleModel::from_parts(p.config, p.codec, nets)?;
    if model.projection().checksum() != p.projection_checksum {
        return Err(Error::Integrity("frozen projection differs from the one trained with".into()));
    }
    Ok(Checkpoint {
        model,
        history: p.history,
    })
}

pub fn save<T: Scalar>(model: &MiracleModel<T>, history: Option<&TrainingHistory>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, history)?).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Hex SHA-256 of a checkpoint file's bytes.
pub fn file_digest(bytes: &[u8]) -> String {
    hex_string(&Sha256::digest(bytes))
}
