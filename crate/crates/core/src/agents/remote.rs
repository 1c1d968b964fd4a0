use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AgentError, GenerationParams};

/// Endpoint settings, usually read from the JSON config file. The API key
/// itself comes from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_backoff_base")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_cap")]
    pub backoff_cap_ms: u64,
    #[serde(default = "default_ceiling")]
    pub max_tokens_ceiling: u32,
    #[serde(default)]
    pub log_path: Option<PathBuf>,
}

fn default_timeout() -> u64 {
    60
}
fn default_retries() -> u32 {
    3
}
fn default_concurrency() -> usize {
    8
}
fn default_backoff_base() -> u64 {
    500
}
fn default_backoff_cap() -> u64 {
    30_000
}
fn default_ceiling() -> u32 {
    1024
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_retries: default_retries(),
            concurrency: default_concurrency(),
            backoff_base_ms: default_backoff_base(),
            backoff_cap_ms: default_backoff_cap(),
            max_tokens_ceiling: default_ceiling(),
            log_path: None,
        }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor).min(self.backoff_cap_ms))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generation {
    pub text: String,
    pub retries: u32,
}

struct Semaphore {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cond.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cond.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(AgentError),
}

/// Blocking chat-completions client shared by every dialogue of a campaign.
pub struct ChatClient {
    config: EndpointConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    gate: Semaphore,
    log: Option<Mutex<File>>,
}

impl ChatClient {
    pub fn new(config: EndpointConfig) -> Result<Self, AgentError> {
        if config.base_url.trim().is_empty() {
            return Err(AgentError::InvalidConfig("base_url is empty".into()));
        }
        if config.concurrency == 0 {
            return Err(AgentError::InvalidConfig("concurrency must be at least 1".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| AgentError::InvalidConfig(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let log = match &config.log_path {
            Some(path) => Some(Mutex::new(OpenOptions::new().create(true).append(true).open(path)?)),
            None => None,
        };
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build();
        Ok(ChatClient {
            gate: Semaphore {
                free: Mutex::new(config.concurrency),
                cond: Condvar::new(),
            },
            config,
            agent,
            api_key,
            log,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Sends `prompt` as a single user message and returns the first
    /// choice's content. Transport failures, 429 and 5xx responses are
    /// retried with exponential backoff; 401/403 fail at once.
    pub fn generate(&self, prompt: &str, params: &GenerationParams) -> Result<Generation, AgentError> {
        if prompt.trim().is_empty() {
            return Err(AgentError::InvalidParams("prompt is empty".into()));
        }
        params.validate(self.config.max_tokens_ceiling)?;
        let body = json!({
            "model": params.model_id,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
            "stop": params.stop_sequences,
        });
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let _permit = self.gate.acquire();
        let mut attempt = 0u32;
        loop {
            let outcome = self.attempt(&url, &body);
            self.log_exchange(attempt, &body, &outcome);
            match outcome {
                Ok(text) => {
                    return Ok(Generation { text, retries: attempt });
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(reason)) => {
                    if attempt >= self.config.max_retries {
                        return Err(AgentError::TransportError {
                            attempts: attempt + 1,
                            reason,
                        });
                    }
                    tracing::warn!(attempt, %reason, "retrying generation request");
                    std::thread::sleep(self.config.backoff(attempt));
                    attempt += 1;
                }
            }
        }
    }

    fn attempt(&self, url: &str, body: &Value) -> Result<String, Failure> {
        let mut request = self.agent.post(url);
        if let Some(key) = &self.api_key {
            request = request.set("Authorization", &format!("Bearer {key}"));
        }
        let response = match request.send_json(body.clone()) {
            Ok(r) => r,
            Err(ureq::Error::Status(code @ (401 | 403), _)) => return Err(Failure::Fatal(AgentError::AuthError(code))),
            Err(ureq::Error::Status(code, _)) if code == 429 || code >= 500 => {
                return Err(Failure::Retryable(format!("HTTP {code}")))
            }
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                return Err(Failure::Fatal(AgentError::TransportError {
                    attempts: 1,
                    reason: format!("HTTP {code}: {detail}"),
                }));
            }
            Err(ureq::Error::Transport(t)) => return Err(Failure::Retryable(t.to_string())),
        };
        let parsed: Value = response
            .into_json()
            .map_err(|e| Failure::Retryable(format!("unreadable response body: {e}")))?;
        let text = parsed["choices"][0]["message"]["content"].as_str().unwrap_or_default();
        if text.trim().is_empty() {
            return Err(Failure::Fatal(AgentError::ModelRefusal));
        }
        Ok(text.to_string())
    }

    fn log_exchange(&self, attempt: u32, request: &Value, outcome: &Result<String, Failure>) {
        let Some(log) = &self.log else { return };
        let (response, error) = match outcome {
            Ok(text) => (Some(text.as_str()), None),
            Err(Failure::Retryable(reason)) => (None, Some(reason.clone())),
            Err(Failure::Fatal(e)) => (None, Some(e.to_string())),
        };
        let line = json!({
            "timestamp": chrono::Utc::now().to_rfc3339(),
            "attempt": attempt,
            "request": request,
            "response": response,
            "error": error,
        });
        let mut file = log.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = writeln!(file, "{line}") {
            tracing::warn!(error = %e, "could not write request log");
        }
    }
}

/// One-off generation against `endpoint`. Campaigns should share a
/// [`ChatClient`] instead so the concurrency ceiling applies across calls.
pub fn remote_generate(
    prompt: &str,
    params: &GenerationParams,
    endpoint: &EndpointConfig,
) -> Result<Generation, AgentError> {
    ChatClient::new(endpoint.clone())?.generate(prompt, params)
}
