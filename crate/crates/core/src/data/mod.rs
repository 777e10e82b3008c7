//! Patient schema, preprocessing, CSV ingestion and the synthetic cohort.

mod codec;
mod csv_io;
mod record;
mod synth;

pub use codec::{fit_codec, EncodedRecord, FeatureCodec, FieldCodec, RadiomicStats};
pub use csv_io::{
    load_csv, load_dataset_dir, write_dataset_dir, DatasetPaths, CLINICAL_FILE, LABELS_FILE,
    RADIOMIC_FILE, SCHEMA_FILE,
};
pub use record::{
    missing_fields, positive_rate, ClinicalSchema, ClinicalValue, DatasetSplit, FieldKind,
    FieldSpec, PatientRecord, SplitName, CLINICAL_FIELDS, RADIOMIC_FEATURES,
};
pub use synth::{
    generate_synthetic, SynthConfig, DEFAULT_PREVALENCES, DEFAULT_SIZES, INTERCEPT,
    LATENT_FACTORS, SIGNAL_SCALE, WORLD_SEED,
};
