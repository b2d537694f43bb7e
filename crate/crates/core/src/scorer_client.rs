//! HTTP client for the neural scoring service (`/health`, `/entail`,
//! `/embed`). It implements both [`EntailmentScorer`] and [`Embedder`], and
//! checks every response against the wire contract before using it.

use std::sync::Mutex;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::eval::{EmbedError, Embedder};
use crate::filter::{EntailmentScorer, ScorerError};

pub const ENV_SCORER_URL: &str = "IE_FORGE_SCORER_URL";
pub const ENV_SCORER_TOKEN: &str = "IE_FORGE_SCORER_TOKEN";

/// Largest accepted deviation of a vector norm from 1 before the vector is
/// rejected. Vectors within it are renormalized.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClientError {
    #[error("scorer service unavailable: {0}")]
    Unavailable(String),
    #[error("scorer service rejected the request with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("invalid scorer response: {0}")]
    InvalidResponse(String),
    #[error("scorer client configuration: {0}")]
    Config(String),
}

impl From<ClientError> for ScorerError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Unavailable(m) => ScorerError::Unavailable(m),
            ClientError::Config(m) => ScorerError::Unavailable(m),
            other => ScorerError::InvalidResponse(other.to_string()),
        }
    }
}

impl From<ClientError> for EmbedError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Unavailable(m) => EmbedError::Unavailable(m),
            ClientError::Config(m) => EmbedError::Unavailable(m),
            other => EmbedError::InvalidResponse(other.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScorerClientConfig {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    /// Pairs or texts per request.
    pub batch_size: usize,
}

impl ScorerClientConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            token: None,
            timeout: Duration::from_secs(60),
            batch_size: 64,
        }
    }

    pub fn from_env() -> Result<Self, ClientError> {
        let url =
            std::env::var(ENV_SCORER_URL).map_err(|_| ClientError::Config(format!("{ENV_SCORER_URL} is not set")))?;
        let mut cfg = Self::new(url);
        cfg.token = std::env::var(ENV_SCORER_TOKEN).ok().filter(|t| !t.is_empty());
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub embed_dim: Option<usize>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

#[derive(Deserialize)]
struct ScoreResponse {
    score: f64,
}

#[derive(Deserialize)]
struct ScoresResponse {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

pub struct ScorerClient {
    config: ScorerClientConfig,
    agent: ureq::Agent,
    dim: Mutex<Option<usize>>,
}

impl std::fmt::Debug for ScorerClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScorerClient").field("base_url", &self.config.base_url).finish_non_exhaustive()
    }
}

impl ScorerClient {
    pub fn new(config: ScorerClientConfig) -> Result<Self, ClientError> {
        if config.batch_size == 0 {
            return Err(ClientError::Config("batch_size must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Ok(Self { config, agent, dim: Mutex::new(None) })
    }

    pub fn config(&self) -> &ScorerClientConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.config.base_url)
    }

    fn finish<T: DeserializeOwned>(
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ClientError> {
        let mut resp = result.map_err(|e| ClientError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body =
            resp.body_mut().read_to_string().map_err(|e| ClientError::Unavailable(format!("reading body: {e}")))?;
        match status {
            200..=299 => serde_json::from_str(&body).map_err(|e| ClientError::InvalidResponse(format!("{e}: {body}"))),
            503 => Err(ClientError::Unavailable("service is loading models (503)".into())),
            500..=599 => Err(ClientError::Unavailable(format!("status {status}: {body}"))),
            _ => Err(ClientError::Rejected { status, body }),
        }
    }

    fn post<T: DeserializeOwned>(&self, path: &str, body: &serde_json::Value) -> Result<T, ClientError> {
        let mut req = self.agent.post(&self.url(path));
        if let Some(t) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        Self::finish(req.send_json(body))
    }

    pub fn health(&self) -> Result<Health, ClientError> {
        let mut req = self.agent.get(&self.url("/health"));
        if let Some(t) = &self.config.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let health: Health = Self::finish(req.call())?;
        if let Some(d) = health.embed_dim {
            self.check_dim(d)?;
        }
        Ok(health)
    }

    pub fn entail(&self, premise: &str, hypothesis: &str) -> Result<f64, ClientError> {
        let r: ScoreResponse = self.post("/entail", &json!({"premise": premise, "hypothesis": hypothesis}))?;
        Ok(validate_scores(vec![r.score], 1)?[0])
    }

    pub fn entail_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ClientError> {
        let mut out = Vec::with_capacity(pairs.len());
        for chunk in pairs.chunks(self.config.batch_size) {
            let body: Vec<_> = chunk.iter().map(|(p, h)| json!({"premise": p, "hypothesis": h})).collect();
            let r: ScoresResponse = self.post("/entail", &json!({ "pairs": body }))?;
            out.extend(validate_scores(r.scores, chunk.len())?);
        }
        Ok(out)
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.config.batch_size) {
            let r: EmbedResponse = self.post("/embed", &json!({ "texts": chunk }))?;
            self.check_dim(r.dim)?;
            out.extend(validate_vectors(r.vectors, chunk.len(), r.dim)?);
        }
        Ok(out)
    }

    /// The embedding dimension must not change during the client's life.
    fn check_dim(&self, dim: usize) -> Result<(), ClientError> {
        let mut known = self.dim.lock().unwrap_or_else(|e| e.into_inner());
        match *known {
            Some(d) if d != dim => {
                Err(ClientError::InvalidResponse(format!("embedding dimension changed from {d} to {dim}")))
            }
            _ => {
                *known = Some(dim);
                Ok(())
            }
        }
    }
}

pub fn validate_scores(scores: Vec<f64>, expected: usize) -> Result<Vec<f64>, ClientError> {
    if scores.len() != expected {
        return Err(ClientError::InvalidResponse(format!("expected {expected} score(s), got {}", scores.len())));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(ClientError::InvalidResponse(format!("score {bad} outside [0, 1]")));
    }
    Ok(scores)
}

/// Checks count and dimension, and renormalizes vectors whose norm is
/// within [`NORM_TOLERANCE`] of 1.
pub fn validate_vectors(vectors: Vec<Vec<f64>>, expected: usize, dim: usize) -> Result<Vec<Vec<f64>>, ClientError> {
    if vectors.len() != expected {
        return Err(ClientError::InvalidResponse(format!("expected {expected} vector(s), got {}", vectors.len())));
    }
    if dim == 0 {
        return Err(ClientError::InvalidResponse("embedding dimension is 0".into()));
    }
    vectors
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| {
            if v.len() != dim {
                return Err(ClientError::InvalidResponse(format!(
                    "vector {i} has dimension {}, expected {dim}",
                    v.len()
                )));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOLERANCE {
                return Err(ClientError::InvalidResponse(format!("vector {i} has norm {norm}")));
            }
            v.iter_mut().for_each(|x| *x /= norm);
            Ok(v)
        })
        .collect()
}

impl EntailmentScorer for ScorerClient {
    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, ScorerError> {
        Ok(self.entail(premise, hypothesis)?)
    }

    fn score_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ScorerError> {
        Ok(self.entail_batch(pairs)?)
    }
}

impl Embedder for ScorerClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, EmbedError> {
        Ok(self.embed_texts(texts)?)
    }
}
