//! Chat-completions client for hosted models.
//!
//! Sends `{"model", "messages": [{role, content}], "temperature", "top_p",
//! "max_tokens", "n"}` and reads `choices[].message.content` back. Transport
//! failures and 5xx responses are retried with exponential backoff; 429
//! responses are retried after the server's `Retry-After` delay.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatBackend, ChatRequest, GatewayError};

pub const ENV_API_URL: &str = "IE_FORGE_API_URL";
pub const ENV_API_KEY: &str = "IE_FORGE_API_KEY";
pub const ENV_MODEL: &str = "IE_FORGE_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 4, base_delay: Duration::from_millis(500), max_delay: Duration::from_secs(30) }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): `base * 2^retry`, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31)).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }

    /// Reads endpoint, key and model from `IE_FORGE_API_URL`,
    /// `IE_FORGE_API_KEY` and `IE_FORGE_MODEL`.
    pub fn from_env() -> Result<Self, GatewayError> {
        let url = std::env::var(ENV_API_URL).map_err(|_| GatewayError::Config(format!("{ENV_API_URL} is not set")))?;
        let model = std::env::var(ENV_MODEL).map_err(|_| GatewayError::Config(format!("{ENV_MODEL} is not set")))?;
        let mut cfg = Self::new(url, model);
        cfg.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("url", &self.config.url)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: Option<String>,
}

enum Attempt {
    Done(Result<Vec<String>, GatewayError>),
    Retry { error: GatewayError, wait: Option<Duration> },
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn body(&self, req: &ChatRequest) -> serde_json::Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
            "n": req.n_samples,
        });
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        body
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let mut call = self.agent.post(&self.config.url);
        if let Some(key) = &self.config.api_key {
            call = call.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry {
                    error: GatewayError::BackendUnavailable { attempts: 1, last_error: e.to_string() },
                    wait: None,
                }
            }
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry {
                    error: GatewayError::BackendUnavailable { attempts: 1, last_error: format!("reading body: {e}") },
                    wait: None,
                }
            }
        };
        match status {
            200..=299 => Attempt::Done(parse_choices(&text)),
            429 => Attempt::Retry { error: GatewayError::RateLimited { retry_after }, wait: retry_after },
            500..=599 => Attempt::Retry {
                error: GatewayError::BackendUnavailable {
                    attempts: 1,
                    last_error: format!("status {status}: {}", truncate(&text, 200)),
                },
                wait: None,
            },
            _ => Attempt::Done(Err(GatewayError::Rejected { status, body: truncate(&text, 500) })),
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}...", &s[..i]),
        None => s.to_string(),
    }
}

fn parse_choices(text: &str) -> Result<Vec<String>, GatewayError> {
    let parsed: CompletionResponse = serde_json::from_str(text)
        .map_err(|e| GatewayError::InvalidResponse(format!("{e}: {}", truncate(text, 200))))?;
    parsed
        .choices
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            c.message.content.ok_or_else(|| GatewayError::InvalidResponse(format!("choice {i} has no content")))
        })
        .collect()
}

impl ChatBackend for RemoteBackend {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        let body = self.body(req);
        let policy = &self.config.retry;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(result) => return result,
                Attempt::Retry { error, wait } => {
                    let retry = attempts - 1;
                    if retry >= policy.max_retries {
                        return Err(match error {
                            GatewayError::BackendUnavailable { last_error, .. } => {
                                GatewayError::BackendUnavailable { attempts, last_error }
                            }
                            other => other,
                        });
                    }
                    let delay = wait.map_or_else(|| policy.backoff(retry), |w| w.min(policy.max_delay));
                    log::warn!("chat request failed ({error}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
            }
        }
    }
}
