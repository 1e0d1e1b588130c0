use std::collections::BTreeMap;
use std::io;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use ureq::Agent;

use super::{prompt_hash, GenParams, LlmBackend, LlmError};

/// Replays canned completions keyed by prompt hash.
///
/// A directory holds `<prompt-hash>.json` files, each a JSON array of
/// strings, and optionally `default.json` used for any other prompt.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    canned: BTreeMap<String, Vec<String>>,
    fallback: Option<Vec<String>>,
    model: String,
}

impl StubBackend {
    pub fn new(canned: BTreeMap<String, Vec<String>>, fallback: Option<Vec<String>>) -> Self {
        StubBackend {
            canned,
            fallback,
            model: "stub".into(),
        }
    }

    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut canned = BTreeMap::new();
        let mut fallback = None;
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let completions: Vec<String> = serde_json::from_str(&std::fs::read_to_string(&path)?)
                .map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            if stem == "default" {
                fallback = Some(completions);
            } else {
                canned.insert(stem, completions);
            }
        }
        Ok(StubBackend::new(canned, fallback))
    }
}

impl LlmBackend for StubBackend {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Vec<String>, LlmError> {
        let hash = prompt_hash(prompt);
        let found = self
            .canned
            .get(&hash)
            .or(self.fallback.as_ref())
            .ok_or_else(|| LlmError::Backend {
                message: format!("no canned completions for prompt {hash}"),
                status: None,
                retryable: false,
            })?;
        Ok(found.iter().take(params.n_completions).cloned().collect())
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireFormat {
    /// `{"prompt": ...}` in, `choices[].text` out.
    Completions,
    /// `{"messages": [{"role": "user", ...}]}` in, `choices[].message.content` out.
    Chat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the bearer token; no auth header when unset.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_wire")]
    pub wire: WireFormat,
}

fn default_timeout() -> u64 {
    120
}

fn default_wire() -> WireFormat {
    WireFormat::Completions
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    agent: Agent,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpBackend { config, agent }
    }

    fn body(&self, prompt: &str, params: &GenParams) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "repetition_penalty": params.repetition_penalty,
            "n": params.n_completions,
            "max_tokens": params.max_tokens,
        });
        match self.config.wire {
            WireFormat::Completions => body["prompt"] = json!(prompt),
            WireFormat::Chat => body["messages"] = json!([{ "role": "user", "content": prompt }]),
        }
        body
    }
}

fn choice_text(choice: &Value) -> Option<String> {
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl LlmBackend for HttpBackend {
    fn complete(&self, prompt: &str, params: &GenParams) -> Result<Vec<String>, LlmError> {
        let mut request = self.agent.post(&self.config.url);
        if let Some(var) = &self.config.token_env {
            if let Ok(token) = std::env::var(var) {
                request = request.header("Authorization", format!("Bearer {token}"));
            }
        }
        let mut response =
            request
                .send_json(self.body(prompt, params))
                .map_err(|e| LlmError::Backend {
                    message: e.to_string(),
                    status: None,
                    retryable: true,
                })?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            let detail = response.body_mut().read_to_string().unwrap_or_default();
            return Err(LlmError::Backend {
                message: detail.chars().take(500).collect(),
                status: Some(status),
                retryable: status == 429 || status >= 500,
            });
        }
        let payload: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Backend {
                message: format!("unreadable response: {e}"),
                status: Some(status),
                retryable: false,
            })?;
        let choices = payload
            .get("choices")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::Backend {
                message: "response has no choices".into(),
                status: Some(status),
                retryable: false,
            })?;
        Ok(choices
            .iter()
            .filter_map(choice_text)
            .take(params.n_completions)
            .collect())
    }

    fn model_name(&self) -> &str {
        &self.config.model
    }
}
