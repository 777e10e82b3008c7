//! Mean-field Gaussian layers and MLP stacks trained by reparameterized
//! sampling, with closed-form KL to a standard-normal prior.

mod layer;
mod mlp;

pub use layer::{
    LayerNoise, LinearGrads, LinearTrace, OutputVariance, PosteriorScales, VariationalLinear, INITIAL_RHO,
};
pub use mlp::{
    Activation, BayesianMlp, ForwardTrace, LayerTrace, MlpGrads, MlpSpec, DEFAULT_DROPOUT,
    DEFAULT_KL_WEIGHT, DEFAULT_MC_SAMPLES,
};

#[allow(unused_imports)]
pub(crate) use layer::normal;
