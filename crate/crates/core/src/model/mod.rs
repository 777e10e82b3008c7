//! The assembled risk model: configuration, fusion, prediction and the
//! remark-edit loop, training, checkpoints and ablations.

mod ablation;
pub mod checkpoint;
mod config;
mod fusion;
mod network;
mod train;

pub use ablation::{ablate, AblationRow, AblationTable};
pub use config::{Ablation, FusionWeights, MiracleConfig, OptimizerConfig};
pub use fusion::fuse;
pub use network::{
    derive_seed, ChannelEmbeddings, MiracleModel, NetworkGrads, Networks, PredictionResult,
};
pub use train::{
    evaluate, fusion_grid_search, generate_remarks, predict_all, train, train_from, EpochRecord, RemarkTable,
    TrainOutcome, TrainingHistory,
};
