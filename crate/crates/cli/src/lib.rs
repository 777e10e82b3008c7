//! `miracle` command line: synthetic data, training, evaluation, ablation,
//! single-patient prediction and the HTTP service.

pub mod config;
pub mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use miracle_core::data::{
    fit_codec, generate_synthetic, FeatureCodec, load_dataset_dir, write_dataset_dir, ClinicalSchema, DatasetSplit, PatientRecord,
    SplitName, SynthConfig, DEFAULT_PREVALENCES, DEFAULT_SIZES,
};
use miracle_core::model::{
    ablate, checkpoint, derive_seed, evaluate, generate_remarks, train, Ablation, RemarkTable,
};
use miracle_core::remarks::{
    fnv1a, remark_generator, summarize, CompletionConfig, KnowledgeBank, PromptTemplate, Remark, RemarkOrigin,
};
use miracle_core::{Error, Miracle};
use serde_json::json;

use crate::manifest::{beside, ManifestBuilder};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;
pub const EXIT_COMPAT: i32 = 4;

pub const FPR_CAPS: [f64; 2] = [0.2, 0.3];

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn usage(e: Error) -> CliError {
    CliError::usage(e.to_string())
}

fn training(e: Error) -> CliError {
    match e {
        Error::Config(_) | Error::Input(_) => CliError::usage(e.to_string()),
        _ => CliError::new(EXIT_TRAINING, e.to_string()),
    }
}

fn compat(e: Error) -> CliError {
    CliError::new(EXIT_COMPAT, e.to_string())
}

/// Checkpoint load failures: missing files are usage errors, anything
/// about the content is a compatibility error.
fn checkpoint_error(e: Error) -> CliError {
    match e {
        Error::Io { .. } => usage(e),
        _ => compat(e),
    }
}

#[derive(Debug, Parser)]
#[command(name = "miracle", version, about = "Multimodal post-operative complication risk model")]
pub struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort (clinical.csv, radiomics.csv, labels.csv, schema.json).
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history CSV and manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split: report JSON plus roc.csv.
    Eval(EvalArgs),
    /// Train every ablation mode for several seeds and tabulate test metrics.
    Ablate(AblateArgs),
    /// Predict one patient from a JSON record and print the result.
    Predict(PredictArgs),
    /// Run the HTTP inference service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RemarkArgs {
    /// Use the rule-based offline remark generator.
    #[arg(long)]
    pub stub_llm: bool,
    #[arg(long, value_name = "FILE")]
    pub knowledge_bank: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub prompt: Option<PathBuf>,
}

impl RemarkArgs {
    fn completion(&self) -> CompletionConfig {
        if self.stub_llm {
            CompletionConfig::stub()
        } else {
            CompletionConfig::from_env()
        }
    }

    fn bank(&self) -> Result<KnowledgeBank, CliError> {
        match &self.knowledge_bank {
            Some(p) => KnowledgeBank::load(p).map_err(usage),
            None => Ok(KnowledgeBank::builtin()),
        }
    }

    fn prompt(&self) -> Result<PromptTemplate, CliError> {
        match &self.prompt {
            Some(p) => PromptTemplate::load(p).map_err(usage),
            None => Ok(PromptTemplate::builtin()),
        }
    }

    fn remarks(&self, records: &[PatientRecord], codec: &FeatureCodec) -> Result<RemarkTable, CliError> {
        let generator = remark_generator(&self.completion()).map_err(usage)?;
        generate_remarks(records, codec, generator.as_ref(), &self.bank()?, &self.prompt()?)
            .map_err(|e| CliError::new(EXIT_TRAINING, e.to_string()))
    }
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// JSON or `key = value` config document.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set optimizer.max_epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self, ablation: Option<Ablation>) -> Result<miracle_core::model::MiracleConfig, CliError> {
        let mut overrides = self.overrides.clone();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        if let Some(n) = self.max_epochs {
            overrides.push(format!("optimizer.max_epochs={n}"));
        }
        if let Some(a) = ablation {
            overrides.push(format!("ablation={}", a.as_str()));
        }
        config::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Train, validation and test sizes.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
    pub sizes: Vec<usize>,
    /// Positive rate of each split.
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_PREVALENCES)]
    pub prevalences: Vec<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "CKPT")]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_ablation)]
    pub ablation: Option<Ablation>,
    /// Defaults to `<CKPT>.history.csv`.
    #[arg(long, value_name = "CSV")]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub remarks: RemarkArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value = "test", value_parser = parse_split)]
    pub split: SplitName,
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
    /// Defaults to `roc.csv` beside the report.
    #[arg(long, value_name = "CSV")]
    pub roc: Option<PathBuf>,
    #[command(flatten)]
    pub remarks: RemarkArgs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', value_parser = parse_ablation,
          default_values_t = Ablation::ALL)]
    pub modes: Vec<Ablation>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub remarks: RemarkArgs,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, value_name = "CKPT")]
    pub ckpt: PathBuf,
    /// Patient record as JSON.
    #[arg(long, value_name = "FILE")]
    pub patient: PathBuf,
    /// Use this text as the remark instead of generating one.
    #[arg(long, value_name = "FILE")]
    pub remark: Option<PathBuf>,
    /// Base seed for the MC draws; defaults to the checkpoint's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub remarks: RemarkArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, visible_alias = "checkpoint", value_name = "CKPT")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    /// Full bind address; overrides `--port`.
    #[arg(long)]
    pub bind: Option<SocketAddr>,
    #[arg(long, value_name = "DIR")]
    pub demo_data: Option<PathBuf>,
    /// Fall back to the offline stub when the completion endpoint fails.
    #[arg(long)]
    pub fallback_stub: bool,
    #[arg(long, value_name = "JSONL")]
    pub audit_log: Option<PathBuf>,
    #[arg(long, default_value_t = 1800)]
    pub session_ttl_secs: u64,
    #[command(flatten)]
    pub remarks: RemarkArgs,
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> Result<SplitName, String> {
    match s {
        "train" => Ok(SplitName::Train),
        "val" => Ok(SplitName::Val),
        "test" => Ok(SplitName::Test),
        _ => Err(format!("unknown split `{s}` (train, val, test)")),
    }
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn load_data(dir: &Path) -> Result<(ClinicalSchema, DatasetSplit), CliError> {
    load_dataset_dir(dir).map_err(|e| CliError::usage(format!("cannot load dataset {}: {e}", dir.display())))
}

fn all_records(data: &DatasetSplit) -> Vec<PatientRecord> {
    data.iter().map(|(_, r)| r.clone()).collect()
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let config = SynthConfig {
        sizes: a.sizes.clone().try_into().map_err(|_| CliError::usage("--sizes needs three values"))?,
        prevalences: a
            .prevalences
            .clone()
            .try_into()
            .map_err(|_| CliError::usage("--prevalences needs three values"))?,
        seed: a.seed,
    };
    config.validate().map_err(usage)?;
    let mut m = ManifestBuilder::start("synth");
    m.config(&config).seed(a.seed);
    let data = generate_synthetic(&config).map_err(usage)?;
    write_dataset_dir(&a.out, &ClinicalSchema::stand_in(), &data).map_err(usage)?;
    m.output("dataset", &a.out);
    m.write(&a.out.join("manifest.json"))?;
    println!(
        "{}",
        json!({"out": a.out, "train": data.train.len(), "val": data.val.len(), "test": data.test.len()})
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let config = a.config.resolve(a.ablation)?;
    let (schema, data) = load_data(&a.data)?;
    let codec = fit_codec(&schema, &data.train).map_err(usage)?;
    let mut m = ManifestBuilder::start("train");
    m.config(&json!({"model": config, "completion": a.remarks.completion(), "data": a.data}))
        .seed(config.seed);
    let records = all_records(&data);
    let remarks = if config.ablation.uses_remark() {
        a.remarks.remarks(&records, &codec)?
    } else {
        RemarkTable::new()
    };
    let outcome = train::<f64>(config, codec, &data.train, &data.val, &remarks).map_err(training)?;
    checkpoint::save(&outcome.model, Some(&outcome.history), &a.out).map_err(usage)?;
    let history_path = a.history.clone().unwrap_or_else(|| {
        let mut s = a.out.as_os_str().to_owned();
        s.push(".history.csv");
        PathBuf::from(s)
    });
    outcome.history.save_csv(&history_path).map_err(usage)?;
    m.output("checkpoint", &a.out).output("history", &history_path);
    m.write(&beside(&a.out))?;
    println!(
        "{}",
        json!({
            "checkpoint": a.out,
            "best_epoch": outcome.history.best_epoch,
            "best_val_auc": outcome.history.best_val_auc,
            "epochs": outcome.history.epochs.len(),
            "stopped_early": outcome.history.stopped_early,
        })
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<Miracle, CliError> {
    checkpoint::load::<f64>(path).map(|c| c.model).map_err(checkpoint_error)
}

fn eval_cmd(a: EvalArgs) -> Result<(), CliError> {
    let model = load_model(&a.ckpt)?;
    let (schema, data) = load_data(&a.data)?;
    if schema != model.codec().schema {
        return Err(CliError::new(
            EXIT_COMPAT,
            "dataset schema differs from the schema the checkpoint was trained on",
        ));
    }
    let records = data.get(a.split).to_vec();
    let mut m = ManifestBuilder::start("eval");
    m.config(&json!({"model": model.config(), "split": a.split.as_str(), "data": a.data, "checkpoint": a.ckpt}))
        .seed(model.config().seed);
    let remarks = if model.ablation().uses_remark() {
        a.remarks.remarks(&records, model.codec())?
    } else {
        RemarkTable::new()
    };
    let (_, report) = evaluate(&model, &records, &remarks, &FPR_CAPS).map_err(compat)?;
    std::fs::write(&a.out, report.to_json().map_err(usage)?)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", a.out.display())))?;
    let roc = a.roc.clone().unwrap_or_else(|| a.out.with_file_name("roc.csv"));
    report.roc.save_csv(&roc).map_err(usage)?;
    m.output("report", &a.out).output("roc", &roc);
    m.write(&beside(&a.out))?;
    println!(
        "{}",
        json!({"split": a.split.as_str(), "auc": report.auc, "tpr_at_fpr": report.tpr_at_fpr, "counts": report.counts})
    );
    Ok(())
}

fn ablate_cmd(a: AblateArgs) -> Result<(), CliError> {
    let config = a.config.resolve(None)?;
    let (schema, data) = load_data(&a.data)?;
    let codec = fit_codec(&schema, &data.train).map_err(usage)?;
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::usage(format!("{}: {e}", a.out.display())))?;
    let mut m = ManifestBuilder::start("ablate");
    m.config(&json!({"model": config, "modes": a.modes, "seeds": a.seeds, "data": a.data}))
        .seed(config.seed);
    let remarks = if a.modes.iter().any(|m| m.uses_remark()) {
        a.remarks.remarks(&all_records(&data), &codec)?
    } else {
        RemarkTable::new()
    };
    let table = ablate::<f64>(&config, &codec, &data, &remarks, &a.modes, &a.seeds, &FPR_CAPS).map_err(training)?;
    let (json_path, csv_path) = (a.out.join("ablation.json"), a.out.join("ablation.csv"));
    table.save(&json_path, &csv_path).map_err(usage)?;
    m.output("table_json", &json_path).output("table_csv", &csv_path);
    m.write(&a.out.join("manifest.json"))?;
    let medians: serde_json::Map<String, serde_json::Value> = a
        .modes
        .iter()
        .map(|&mode| (mode.as_str().to_string(), json!(table.median_auc(mode))))
        .collect();
    println!("{}", json!({"median_test_auc": medians}));
    Ok(())
}

fn predict_cmd(a: PredictArgs) -> Result<(), CliError> {
    let model = load_model(&a.ckpt)?;
    let text = std::fs::read_to_string(&a.patient)
        .map_err(|e| CliError::usage(format!("cannot read {}: {e}", a.patient.display())))?;
    let record: PatientRecord =
        serde_json::from_str(&text).map_err(|e| CliError::usage(format!("malformed patient JSON: {e}")))?;
    let schema = &model.codec().schema;
    record.validate(schema).map_err(usage)?;
    let remark = match &a.remark {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", p.display())))?;
            Remark::new(text.trim_end_matches(['\n', '\r']), RemarkOrigin::ClinicianEdited, "clinician").map_err(usage)?
        }
        None => {
            let summary = summarize(schema, &record.clinical).map_err(usage)?;
            let (bank, prompt) = (a.remarks.bank()?, a.remarks.prompt()?);
            remark_generator(&a.remarks.completion())
                .and_then(|g| g.generate(&summary, &bank, &prompt))
                .map_err(|e| CliError::new(EXIT_COMPAT, e.to_string()))?
        }
    };
    let seed = match a.seed {
        Some(base) => derive_seed(base, &[fnv1a(record.patient_id.as_bytes(), 0)]),
        None => model.request_seed(&record.patient_id),
    };
    let p = model.predict_with_seed(&record, &remark, seed).map_err(compat)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "patient_id": p.patient_id,
            "probability": p.probability,
            "mc_std": p.mc_std,
            "sample_probabilities": p.sample_probabilities,
            "remark": p.remark,
            "seed": p.seed,
            "fusion_weights": model.fusion_weights(),
            "ablation": model.ablation().as_str(),
        }))
        .expect("prediction serializes")
    );
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), CliError> {
    let config = miracle_service::ServiceConfig {
        bind: a.bind.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], a.port))),
        checkpoint: a.ckpt.clone(),
        demo_data: a.demo_data.clone(),
        completion: a.remarks.completion(),
        fallback_to_stub: a.fallback_stub,
        knowledge_bank: a.remarks.knowledge_bank.clone(),
        prompt: a.remarks.prompt.clone(),
        session_ttl: Duration::from_secs(a.session_ttl_secs),
        audit_log: a.audit_log.clone(),
    };
    let state = miracle_service::AppState::from_config(&config).map_err(|e| match e {
        Error::Io { .. } | Error::Config(_) | Error::Input(_) => usage(e),
        _ => compat(e),
    })?;
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    rt.block_on(miracle_service::serve(std::sync::Arc::new(state), config.bind))
        .map_err(|e| CliError::usage(format!("cannot serve on {}: {e}", config.bind)))
}
