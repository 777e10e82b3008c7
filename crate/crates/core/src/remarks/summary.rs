use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{missing_fields, ClinicalSchema, ClinicalValue};
use crate::error::{Error, Result};

/// Templated rendering of every clinical field, one sentence per field in
/// schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClinicalSummary {
    pub text: String,
}

pub fn summarize(
    schema: &ClinicalSchema,
    clinical: &BTreeMap<String, ClinicalValue>,
) -> Result<ClinicalSummary> {
    let missing = missing_fields(clinical, schema);
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "missing clinical field(s): {}",
            missing.join(", ")
        )));
    }
    let mut text = String::from("Patient clinical summary.\n");
    for f in &schema.fields {
        let label = f.label.as_deref().unwrap_or(&f.name);
        let value = &clinical[&f.name];
        text.push_str(&format!("- {} ({}): {}.\n", capitalize(label), f.name, value));
    }
    Ok(ClinicalSummary { text })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().collect::<String>() + c.as_str(),
        None => String::new(),
    }
}

/// Curated reference text sent alongside every summary. Never mutated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeBank {
    text: String,
    source_path: PathBuf,
}

pub const DEFAULT_KNOWLEDGE_BANK: &str = include_str!("../../assets/knowledge_bank.txt");
pub const DEFAULT_PROMPT: &str = include_str!("../../assets/prompt.txt");

impl KnowledgeBank {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text, path.to_path_buf())
    }

    pub fn new(text: String, source_path: PathBuf) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config(format!(
                "knowledge bank {} is empty",
                source_path.display()
            )));
        }
        Ok(Self { text, source_path })
    }

    /// The bank shipped with the crate.
    pub fn builtin() -> Self {
        Self {
            text: DEFAULT_KNOWLEDGE_BANK.to_string(),
            source_path: PathBuf::from("assets/knowledge_bank.txt"),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn source_path(&self) -> &Path {
        &self.source_path
    }
}

/// Instruction text appended after the summary and knowledge bank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl PromptTemplate {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(text)
    }

    pub fn new(text: String) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::Config("prompt template is empty".into()));
        }
        Ok(Self { text })
    }

    pub fn builtin() -> Self {
        Self {
            text: DEFAULT_PROMPT.to_string(),
        }
    }

    pub fn text(&self) -> &str {
        &self.text
    }
}
