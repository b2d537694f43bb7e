//! Chat-completion gateway.
//!
//! Pipeline steps render a [`PromptTemplate`](prompt::PromptTemplate) into a
//! [`ChatRequest`] and send it through a [`Gateway`], which validates the
//! request, bounds the number of in-flight calls and checks that the backend
//! returned one completion per requested sample. Two backends ship with the
//! crate: [`RemoteBackend`] for chat-completions style HTTP endpoints and
//! [`MockBackend`], a deterministic scripted generator for offline runs.

use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod mock;
pub mod prompt;
pub mod remote;

pub use mock::{MockBackend, MockDefects};
pub use prompt::{PromptContext, PromptError, PromptLibrary, PromptStep, PromptTemplate};
pub use remote::{RemoteBackend, RemoteConfig, RetryPolicy};

pub const DEFAULT_SYSTEM_PROMPT: &str = "You are a helpful assistant.";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempt(s): {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("rate limited (retry after {retry_after:?})")]
    RateLimited { retry_after: Option<Duration> },
    #[error("backend rejected request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// One chat-completion call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub n_samples: u32,
    /// Sampling seed forwarded to the backend; also varies mock output.
    pub seed: Option<u64>,
    /// Pipeline step that rendered the prompt. Not sent over the wire.
    #[serde(skip)]
    pub step: Option<PromptStep>,
}

/// Decoding parameters used when querying a fine-tuned extraction model.
///
/// `top_k` and `num_beams` are recorded for completeness; hosted chat APIs
/// do not expose them, so [`ChatRequest`] does not carry them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceDefaults {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub num_beams: u32,
    pub max_tokens: u32,
}

impl Default for InferenceDefaults {
    fn default() -> Self {
        Self { temperature: 0.1, top_p: 0.75, top_k: 40, num_beams: 4, max_tokens: 2048 }
    }
}

/// Number of candidate tables drawn when producing annotation references.
pub const REFERENCE_TABLE_SAMPLES: u32 = 3;
pub const REFERENCE_TABLE_TEMPERATURE: f64 = 1.0;

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 1.0,
            top_p: 1.0,
            max_tokens: 2048,
            n_samples: 1,
            seed: None,
            step: None,
        }
    }

    /// Request for a fine-tuned model using the standard decoding defaults.
    pub fn for_inference(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        let d = InferenceDefaults::default();
        Self {
            temperature: d.temperature,
            top_p: d.top_p,
            max_tokens: d.max_tokens,
            ..Self::new(system_prompt, user_prompt)
        }
    }

    /// Three high-temperature samples used as annotator reference tables.
    pub fn reference_tables(user_prompt: impl Into<String>) -> Self {
        Self {
            temperature: REFERENCE_TABLE_TEMPERATURE,
            n_samples: REFERENCE_TABLE_SAMPLES,
            step: Some(PromptStep::TableGenDirect),
            ..Self::new(DEFAULT_SYSTEM_PROMPT, user_prompt)
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_samples(mut self, n: u32) -> Self {
        self.n_samples = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_step(mut self, step: PromptStep) -> Self {
        self.step = Some(step);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: &str| Err(GatewayError::InvalidRequest(msg.to_string()));
        if self.system_prompt.trim().is_empty() {
            return bad("system prompt is empty");
        }
        if self.user_prompt.trim().is_empty() {
            return bad("user prompt is empty");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature must be within [0, 2]");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be within (0, 1]");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        if self.n_samples == 0 {
            return bad("n_samples must be positive");
        }
        Ok(())
    }
}

/// Something that turns a chat request into `n_samples` completions.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError>;
}

impl<F> ChatBackend for F
where
    F: Fn(&ChatRequest) -> Result<Vec<String>, GatewayError> + Send + Sync,
{
    fn complete(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        self(req)
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    pool: rayon::ThreadPool,
    max_in_flight: usize,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway").field("max_in_flight", &self.max_in_flight).finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static, max_in_flight: usize) -> Result<Self, GatewayError> {
        Self::from_arc(Arc::new(backend), max_in_flight)
    }

    pub fn from_arc(backend: Arc<dyn ChatBackend>, max_in_flight: usize) -> Result<Self, GatewayError> {
        if max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be positive".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight)
            .thread_name(|i| format!("gateway-{i}"))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Self { backend, pool, max_in_flight })
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<Vec<String>, GatewayError> {
        req.validate()?;
        let out = self.backend.complete(req)?;
        if out.len() != req.n_samples as usize {
            return Err(GatewayError::InvalidResponse(format!(
                "expected {} completion(s), got {}",
                req.n_samples,
                out.len()
            )));
        }
        Ok(out)
    }

    /// Dispatches independent requests with at most `max_in_flight` running at
    /// once. Results are returned in request order.
    pub fn complete_many(&self, reqs: &[ChatRequest]) -> Vec<Result<Vec<String>, GatewayError>> {
        self.pool.install(|| reqs.par_iter().map(|r| self.complete(r)).collect())
    }
}
