use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::summary::{ClinicalSummary, KnowledgeBank, PromptTemplate};
use crate::error::{Error, Result};

pub const ENV_ENDPOINT: &str = "MIRACLE_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "MIRACLE_LLM_API_KEY";
pub const ENV_MODEL: &str = "MIRACLE_LLM_MODEL";
pub const ENV_STUB: &str = "MIRACLE_STUB_LLM";

pub const STUB_MODEL_NAME: &str = "rule-based-stub";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemarkOrigin {
    LlmGenerated,
    ClinicianEdited,
    Stub,
}

/// Free-text explanation attached to a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Remark {
    pub text: String,
    pub origin: RemarkOrigin,
    pub model_name: String,
}

impl Remark {
    pub fn new(text: impl Into<String>, origin: RemarkOrigin, model_name: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::Input("remark text is empty".into()));
        }
        Ok(Self {
            text,
            origin,
            model_name: model_name.into(),
        })
    }

    /// A clinician's replacement for `self`, keeping the model name.
    pub fn edited(&self, text: impl Into<String>) -> Result<Self> {
        Self::new(text, RemarkOrigin::ClinicianEdited, self.model_name.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionConfig {
    pub endpoint: Option<String>,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub model: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub max_in_flight: usize,
    pub stub: bool,
}

impl Default for CompletionConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_key: None,
            model: "llama-3.3-70b-instruct".into(),
            max_new_tokens: 2000,
            temperature: 0.9,
            timeout_secs: 120,
            max_attempts: 3,
            backoff_base_ms: 500,
            max_in_flight: 4,
            stub: false,
        }
    }
}

impl CompletionConfig {
    /// Reads endpoint, key, model and stub flag from the environment.
    /// Stub mode is enabled when the flag is truthy or no endpoint is set.
    pub fn from_env() -> Self {
        let mut c = Self::default();
        c.endpoint = std::env::var(ENV_ENDPOINT).ok().filter(|s| !s.is_empty());
        c.api_key = std::env::var(ENV_API_KEY).ok().filter(|s| !s.is_empty());
        if let Ok(m) = std::env::var(ENV_MODEL) {
            if !m.is_empty() {
                c.model = m;
            }
        }
        let flag = std::env::var(ENV_STUB)
            .map(|v| matches!(v.to_ascii_lowercase().as_str(), "1" | "true" | "yes" | "on"))
            .unwrap_or(false);
        c.stub = flag || c.endpoint.is_none();
        c
    }

    pub fn stub() -> Self {
        Self {
            stub: true,
            ..Self::default()
        }
    }
}

/// Anything that turns `{summary, bank, prompt}` into a remark.
pub trait RemarkGenerator: Send + Sync {
    fn generate(
        &self,
        summary: &ClinicalSummary,
        bank: &KnowledgeBank,
        prompt: &PromptTemplate,
    ) -> Result<Remark>;

    fn model_name(&self) -> &str;
}

/// The single user message sent to the completion endpoint.
pub fn compose_input(summary: &ClinicalSummary, bank: &KnowledgeBank, prompt: &PromptTemplate) -> String {
    format!(
        "{}\n\n{}\n\n{}",
        summary.text.trim_end(),
        bank.text().trim_end(),
        prompt.text().trim_end()
    )
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().expect("gate poisoned");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// Blocking client for a chat-completion JSON endpoint.
pub struct HttpCompletionClient {
    config: CompletionConfig,
    endpoint: String,
    http: reqwest::blocking::Client,
    gate: Gate,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Retry(String),
    Fatal(String),
}

impl HttpCompletionClient {
    pub fn new(config: CompletionConfig) -> Result<Self> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let gate = Gate {
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            cap: config.max_in_flight.max(1),
        };
        Ok(Self {
            config,
            endpoint,
            http,
            gate,
        })
    }

    pub fn request_body(&self, input: &str) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": input}],
            "max_tokens": self.config.max_new_tokens,
            "temperature": self.config.temperature,
        })
    }

    fn attempt(&self, body: &serde_json::Value) -> std::result::Result<String, Attempt> {
        let mut req = self.http.post(&self.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Retry(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(Attempt::Retry(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(Attempt::Fatal(format!("status {status}")));
        }
        let parsed: ChatResponse = resp
            .json()
            .map_err(|e| Attempt::Fatal(format!("malformed completion response: {e}")))?;
        Ok(parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }
}

impl RemarkGenerator for HttpCompletionClient {
    fn generate(
        &self,
        summary: &ClinicalSummary,
        bank: &KnowledgeBank,
        prompt: &PromptTemplate,
    ) -> Result<Remark> {
        let _slot = self.gate.acquire();
        let body = self.request_body(&compose_input(summary, bank, prompt));
        let attempts = self.config.max_attempts.max(1);
        let mut last = String::new();
        for i in 0..attempts {
            if i > 0 {
                let wait = self.config.backoff_base_ms.saturating_mul(1 << (i - 1));
                std::thread::sleep(Duration::from_millis(wait));
            }
            match self.attempt(&body) {
                Ok(text) if text.trim().is_empty() => {
                    return Err(Error::Generation("completion returned no text".into()))
                }
                Ok(text) => {
                    return Remark::new(text, RemarkOrigin::LlmGenerated, self.config.model.clone())
                }
                Err(Attempt::Fatal(m)) => {
                    return Err(Error::Remote {
                        attempts: i + 1,
                        message: m,
                    })
                }
                Err(Attempt::Retry(m)) => {
                    log::warn!("completion attempt {} failed: {m}", i + 1);
                    last = m;
                }
            }
        }
        Err(Error::Remote {
            attempts,
            message: last,
        })
    }

    fn model_name(&self) -> &str {
        &self.config.model
    }
}

/// Offline generator: a fixed rule set over the values in the summary.
#[derive(Debug, Clone, Default)]
pub struct StubRemarker;

/// Pulls `name -> value` pairs back out of a rendered summary.
fn summary_values(summary: &ClinicalSummary) -> Vec<(String, String)> {
    summary
        .text
        .lines()
        .filter_map(|line| {
            let open = line.rfind('(')?;
            let close = line[open..].find("): ")? + open;
            let name = &line[open + 1..close];
            let value = line[close + 3..].trim_end_matches('.');
            Some((name.to_string(), value.to_string()))
        })
        .collect()
}

impl StubRemarker {
    pub fn render(&self, summary: &ClinicalSummary) -> String {
        let values = summary_values(summary);
        let get = |k: &str| values.iter().find(|(n, _)| n == k).map(|(_, v)| v.as_str());
        let num = |k: &str| get(k).and_then(|v| v.parse::<f64>().ok());
        let mut points = 0;
        let mut findings = Vec::new();

        if let Some(d) = num("dlco_pct_pred") {
            let (s, p) = match d {
                d if d < 60.0 => ("severely reduced diffusing capacity", 3),
                d if d < 80.0 => ("mildly reduced diffusing capacity", 1),
                _ => ("preserved diffusing capacity", 0),
            };
            findings.push(format!("{s} (DLCO {d}% predicted)"));
            points += p;
        }
        if let Some(f) = num("fev1_pct_pred") {
            let (s, p) = match f {
                f if f < 60.0 => ("severely reduced ventilatory reserve", 2),
                f if f < 80.0 => ("moderately reduced ventilatory reserve", 1),
                _ => ("preserved ventilatory reserve", 0),
            };
            findings.push(format!("{s} (FEV1 {f}% predicted)"));
            points += p;
        }
        if let Some(a) = num("age_years") {
            if a >= 75.0 {
                findings.push(format!("advanced age ({a} years)"));
                points += 1;
            }
        }
        if get("smoking_status") == Some("current") {
            findings.push("active smoking".into());
            points += 1;
        }
        if let Some(p) = num("pack_years") {
            if p > 40.0 {
                findings.push(format!("heavy smoking history ({p} pack-years)"));
                points += 1;
            }
        }
        if let Some(asa) = get("asa_class") {
            if asa == "ASA3" || asa == "ASA4" {
                findings.push(format!("significant comorbidity burden ({asa})"));
                points += 1;
            }
        }
        if let Some(alb) = num("albumin_g_dl") {
            if alb < 3.5 {
                findings.push(format!("hypoalbuminemia (albumin {alb} g/dL)"));
                points += 1;
            }
        }
        match get("surgical_approach") {
            Some("open") => {
                findings.push("planned open thoracotomy".into());
                points += 1;
            }
            Some(other) => findings.push(format!("minimally invasive approach ({other})")),
            None => {}
        }
        let level = match points {
            p if p >= 5 => "high",
            p if p >= 2 => "intermediate",
            _ => "low",
        };
        let listed = if findings.is_empty() {
            "no specific risk modifiers recorded".to_string()
        } else {
            findings.join("; ")
        };
        format!(
            "Key findings: {listed}. Overall assessment: {level} risk of postoperative complications."
        )
    }
}

impl RemarkGenerator for StubRemarker {
    fn generate(
        &self,
        summary: &ClinicalSummary,
        _bank: &KnowledgeBank,
        _prompt: &PromptTemplate,
    ) -> Result<Remark> {
        Remark::new(self.render(summary), RemarkOrigin::Stub, STUB_MODEL_NAME)
    }

    fn model_name(&self) -> &str {
        STUB_MODEL_NAME
    }
}

/// Builds the generator selected by `config` (stub or HTTP).
pub fn remark_generator(config: &CompletionConfig) -> Result<Box<dyn RemarkGenerator>> {
    if config.stub {
        Ok(Box::new(StubRemarker))
    } else {
        Ok(Box::new(HttpCompletionClient::new(config.clone())?))
    }
}

pub fn generate_remark(
    summary: &ClinicalSummary,
    bank: &KnowledgeBank,
    prompt: &PromptTemplate,
    config: &CompletionConfig,
) -> Result<Remark> {
    remark_generator(config)?.generate(summary, bank, prompt)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn summary(dlco: f64) -> ClinicalSummary {
        ClinicalSummary {
            text: format!(
                "Patient clinical summary.\n- DLCO in percent predicted (dlco_pct_pred): {dlco}.\n- Planned surgical approach (surgical_approach): open.\n"
            ),
        }
    }

    #[test]
    fn stub_is_deterministic_and_grades_dlco() {
        let s = StubRemarker;
        let bank = KnowledgeBank::builtin();
        let prompt = PromptTemplate::builtin();
        let a = s.generate(&summary(45.0), &bank, &prompt).unwrap();
        let b = s.generate(&summary(45.0), &bank, &prompt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.origin, RemarkOrigin::Stub);
        assert!(a.text.contains("severely reduced diffusing capacity (DLCO 45% predicted)"));
        assert!(a.text.contains("planned open thoracotomy"));
        let c = s.generate(&summary(95.0), &bank, &prompt).unwrap();
        assert!(c.text.contains("preserved diffusing capacity"));
    }

    #[test]
    fn compose_orders_sections() {
        let s = summary(70.0);
        let text = compose_input(&s, &KnowledgeBank::builtin(), &PromptTemplate::builtin());
        let i = text.find("Patient clinical summary").unwrap();
        let j = text.find("KNOWLEDGE BANK").unwrap();
        let k = text.find("You are assisting").unwrap();
        assert!(i < j && j < k);
    }

    #[test]
    fn edited_remark_requires_text() {
        let r = Remark::new("x", RemarkOrigin::Stub, "m").unwrap();
        assert!(r.edited("   ").is_err());
        let e = r.edited("new text").unwrap();
        assert_eq!(e.origin, RemarkOrigin::ClinicianEdited);
        assert_eq!(e.model_name, "m");
    }

    #[test]
    fn http_client_needs_endpoint() {
        assert!(matches!(
            HttpCompletionClient::new(CompletionConfig::default()),
            Err(Error::Config(_))
        ));
    }
}
