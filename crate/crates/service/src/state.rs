use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use dashmap::DashMap;
use miracle_core::data::{load_dataset_dir, ClinicalSchema, PatientRecord, SplitName};
use miracle_core::model::{checkpoint, TrainingHistory};
use miracle_core::remarks::{
    remark_generator, summarize, CompletionConfig, KnowledgeBank, PromptTemplate, Remark,
    RemarkGenerator, StubRemarker,
};
use miracle_core::{Error, Miracle, Prediction};

use crate::audit::AuditLog;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub checkpoint: Option<PathBuf>,
    pub demo_data: Option<PathBuf>,
    pub completion: CompletionConfig,
    /// Use the offline stub when the completion endpoint fails.
    pub fallback_to_stub: bool,
    pub knowledge_bank: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub session_ttl: Duration,
    pub audit_log: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoint: None,
            demo_data: None,
            completion: CompletionConfig::from_env(),
            fallback_to_stub: false,
            knowledge_bank: None,
            prompt: None,
            session_ttl: Duration::from_secs(30 * 60),
            audit_log: None,
        }
    }
}

/// Loaded model plus the metadata `/model/info` reports.
pub struct LoadedModel {
    pub model: Arc<Miracle>,
    pub source: Option<PathBuf>,
    pub file_sha256: Option<String>,
    pub history: Option<TrainingHistory>,
    /// Parameter checksum at load time.
    pub checksum: String,
}

/// Demo patients served by the browsing routes.
pub struct DemoData {
    pub schema: ClinicalSchema,
    pub records: Vec<(SplitName, PatientRecord)>,
    index: HashMap<String, usize>,
}

impl DemoData {
    pub fn new(schema: ClinicalSchema, records: Vec<(SplitName, PatientRecord)>) -> Self {
        let index = records
            .iter()
            .enumerate()
            .map(|(i, (_, r))| (r.patient_id.clone(), i))
            .collect();
        Self {
            schema,
            records,
            index,
        }
    }

    pub fn load(dir: &Path) -> miracle_core::Result<Self> {
        let (schema, split) = load_dataset_dir(dir)?;
        let records = split.iter().map(|(s, r)| (s, r.clone())).collect();
        Ok(Self::new(schema, records))
    }

    pub fn get(&self, id: &str) -> Option<&(SplitName, PatientRecord)> {
        self.index.get(id).map(|&i| &self.records[i])
    }
}

pub struct Session {
    pub prediction: Prediction,
}

pub struct SessionEntry {
    pub state: tokio::sync::Mutex<Session>,
    touched: Mutex<Instant>,
}

impl SessionEntry {
    fn touched(&self) -> Instant {
        *self.touched.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn touch(&self) {
        *self.touched.lock().unwrap_or_else(|e| e.into_inner()) = Instant::now();
    }
}

pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    pub demo: Option<DemoData>,
    generator: Arc<dyn RemarkGenerator>,
    fallback_to_stub: bool,
    pub bank: KnowledgeBank,
    pub prompt: PromptTemplate,
    sessions: DashMap<String, Arc<SessionEntry>>,
    pub session_ttl: Duration,
    pub audit: AuditLog,
}

impl AppState {
    /// Builds state from config, loading the checkpoint and demo data if
    /// given.
    pub fn from_config(config: &ServiceConfig) -> miracle_core::Result<Self> {
        let bank = match &config.knowledge_bank {
            Some(p) => KnowledgeBank::load(p)?,
            None => KnowledgeBank::builtin(),
        };
        let prompt = match &config.prompt {
            Some(p) => PromptTemplate::load(p)?,
            None => PromptTemplate::builtin(),
        };
        let demo = config.demo_data.as_deref().map(DemoData::load).transpose()?;
        let generator: Arc<dyn RemarkGenerator> = Arc::from(remark_generator(&config.completion)?);
        let audit = AuditLog::open(config.audit_log.as_deref()).map_err(|e| {
            Error::Config(format!("cannot open audit log: {e}"))
        })?;
        let state = Self {
            model: RwLock::new(None),
            demo,
            generator,
            fallback_to_stub: config.fallback_to_stub,
            bank,
            prompt,
            sessions: DashMap::new(),
            session_ttl: config.session_ttl,
            audit,
        };
        if let Some(path) = &config.checkpoint {
            state.load_checkpoint(path)?;
        }
        Ok(state)
    }

    pub fn load_checkpoint(&self, path: &Path) -> miracle_core::Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let ckpt = checkpoint::from_bytes::<f64>(&bytes)?;
        let loaded = LoadedModel {
            checksum: ckpt.model.parameter_checksum(),
            model: Arc::new(ckpt.model),
            source: Some(path.to_path_buf()),
            file_sha256: Some(checkpoint::file_digest(&bytes)),
            history: ckpt.history,
        };
        self.install(loaded);
        Ok(())
    }

    pub fn set_model(&self, model: Miracle) {
        self.install(LoadedModel {
            checksum: model.parameter_checksum(),
            model: Arc::new(model),
            source: None,
            file_sha256: None,
            history: None,
        });
    }

    fn install(&self, loaded: LoadedModel) {
        *self.model.write().unwrap_or_else(|e| e.into_inner()) = Some(Arc::new(loaded));
        // sessions hold embeddings from the previous parameters
        self.sessions.clear();
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Generates the remark for a record, falling back to the stub when
    /// configured.
    pub fn remark_for(&self, schema: &ClinicalSchema, record: &PatientRecord) -> miracle_core::Result<Remark> {
        let summary = summarize(schema, &record.clinical)?;
        match self.generator.generate(&summary, &self.bank, &self.prompt) {
            Ok(r) => Ok(r),
            Err(e @ (Error::Remote { .. } | Error::Generation(_))) if self.fallback_to_stub => {
                log::warn!("remark generation failed ({e}); using the offline stub");
                StubRemarker.generate(&summary, &self.bank, &self.prompt)
            }
            Err(e) => Err(e),
        }
    }

    pub fn open_session(&self, prediction: Prediction) -> String {
        self.sweep();
        let token = format!("{:032x}", rand::random::<u128>());
        self.sessions.insert(
            token.clone(),
            Arc::new(SessionEntry {
                state: tokio::sync::Mutex::new(Session { prediction }),
                touched: Mutex::new(Instant::now()),
            }),
        );
        token
    }

    /// Live session for `token`; expired ones are dropped and reported as
    /// absent.
    pub fn session(&self, token: &str) -> Option<Arc<SessionEntry>> {
        let entry = self.sessions.get(token).map(|e| e.value().clone())?;
        if entry.touched().elapsed() > self.session_ttl {
            self.sessions.remove(token);
            return None;
        }
        entry.touch();
        Some(entry)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len()
    }

    /// Drops every expired session.
    pub fn sweep(&self) {
        let ttl = self.session_ttl;
        self.sessions.retain(|_, e| e.touched().elapsed() <= ttl);
    }
}
