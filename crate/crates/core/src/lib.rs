//! Multimodal postoperative-risk model: Bayesian encoders for clinical and
//! radiomic features, an LLM remark channel, weighted fusion, focal-loss
//! training and a clinician edit loop.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below pin the `f64` instantiation used by the service and CLI.

pub mod data;
pub mod error;
pub mod model;
pub mod objectives;
pub mod remarks;
pub mod scalar;
pub mod variational;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type VariationalLinearF64 = variational::VariationalLinear<f64>;
pub type VariationalLinearF32 = variational::VariationalLinear<f32>;
pub type BayesianMlpF64 = variational::BayesianMlp<f64>;
pub type BayesianMlpF32 = variational::BayesianMlp<f32>;

pub type Miracle = model::MiracleModel<f64>;
pub type MiracleF32 = model::MiracleModel<f32>;
pub type Prediction = model::PredictionResult<f64>;
