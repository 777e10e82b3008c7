#![allow(dead_code)]

use miracle_core::data::{fit_codec, generate_synthetic, ClinicalSchema, DatasetSplit, FeatureCodec, SynthConfig};
use miracle_core::model::{generate_remarks, MiracleConfig, RemarkTable};
use miracle_core::remarks::{KnowledgeBank, PromptTemplate, StubRemarker};

pub struct Fixture {
    pub data: DatasetSplit,
    pub codec: FeatureCodec,
    pub remarks: RemarkTable,
}

pub fn fixture(sizes: [usize; 3], seed: u64) -> Fixture {
    let data = generate_synthetic(&SynthConfig {
        sizes,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let codec = fit_codec(&ClinicalSchema::stand_in(), &data.train).unwrap();
    let all: Vec<_> = data.train.iter().chain(&data.val).chain(&data.test).cloned().collect();
    let remarks = generate_remarks(
        &all,
        &codec,
        &StubRemarker,
        &KnowledgeBank::builtin(),
        &PromptTemplate::builtin(),
    )
    .unwrap();
    Fixture { data, codec, remarks }
}

/// Narrow hidden layers, same 768-wide embeddings.
pub fn small_config() -> MiracleConfig {
    let mut c = MiracleConfig {
        clinical_dims: vec![16, 768],
        radiomic_dims: vec![16, 768],
        classifier_hidden: vec![16],
        mc_samples: 4,
        ..MiracleConfig::default()
    };
    c.optimizer.max_epochs = 3;
    c.optimizer.batch_size = 32;
    c
}
