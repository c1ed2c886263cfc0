//! Value recommenders for a single missing cell.
//!
//! Two implementations sit behind [`Recommender`]: a deterministic 1-nearest
//! neighbour hot-deck that copies the best retrieved sample's value, and a
//! client for OpenAI-compatible `/chat/completions` endpoints. The HTTP
//! recommender has no calibrated confidence, so it reports the mean similarity
//! of the retrieved evidence.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::retrieval::{PromptTemplate, RetrievedSet, Source};
use crate::table::{Cell, FeatureKind, Schema};

/// Environment variable holding the bearer token for the HTTP recommender.
pub const API_KEY_ENV: &str = "LLMDR_API_KEY";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecoveryError {
    #[error("no retrieved samples to recommend from")]
    EmptyRetrieval,
    #[error("unknown target feature {0:?}")]
    UnknownTarget(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("cannot parse reply {raw:?}: {reason}")]
    Unparseable { raw: String, reason: String },
    #[error("invalid recommender config: {0}")]
    Config(String),
}

impl RecoveryError {
    pub fn is_transport(&self) -> bool {
        matches!(self, RecoveryError::Transport { .. })
    }
}

/// One recommender's proposal for one missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub value: Cell,
    pub confidence: f64,
    pub source: Source,
    pub evidence: RetrievedSet,
}

/// Inputs for one recommendation.
#[derive(Debug, Clone, Copy)]
pub struct RecommendRequest<'a> {
    pub query: &'a [Cell],
    pub target_feature: &'a str,
    pub schema: &'a Schema,
    pub retrieved: &'a RetrievedSet,
}

impl RecommendRequest<'_> {
    fn target_kind(&self) -> Result<FeatureKind, RecoveryError> {
        self.schema
            .index_of(self.target_feature)
            .map(|i| self.schema.feature(i).kind)
            .ok_or_else(|| RecoveryError::UnknownTarget(self.target_feature.to_string()))
    }
}

pub trait Recommender: Send + Sync {
    fn recommend(&self, request: &RecommendRequest<'_>) -> Result<Recommendation, RecoveryError>;

    /// Short label for logs and audit records.
    fn describe(&self) -> String;
}

/// 1-NN hot-deck: the top-ranked sample's target value, with its similarity
/// as confidence.
#[derive(Debug, Clone, Copy, Default)]
pub struct HotDeck;

impl Recommender for HotDeck {
    fn recommend(&self, request: &RecommendRequest<'_>) -> Result<Recommendation, RecoveryError> {
        let kind = request.target_kind()?;
        let target = request.schema.index_of(request.target_feature).expect("checked above");
        let top = request.retrieved.hits.first().ok_or(RecoveryError::EmptyRetrieval)?;
        let value = top.record[target].clone();
        if value.is_missing() || !value.fits(kind) {
            return Err(RecoveryError::Unparseable {
                raw: value.to_string(),
                reason: format!("retrieved sample has no usable {kind:?} value"),
            });
        }
        Ok(Recommendation {
            value,
            confidence: top.similarity.clamp(0.0, 1.0),
            source: request.retrieved.source,
            evidence: request.retrieved.clone(),
        })
    }

    fn describe(&self) -> String {
        "mock_hotdeck".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecommenderKind {
    MockHotdeck,
    HttpChat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommenderConfig {
    pub kind: RecommenderKind,
    /// Base URL; `/chat/completions` is appended.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Retries after the first attempt.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub retry_backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_max_retries() -> u32 {
    2
}

fn default_backoff_ms() -> u64 {
    250
}

impl RecommenderConfig {
    pub fn mock() -> Self {
        RecommenderConfig {
            kind: RecommenderKind::MockHotdeck,
            endpoint: None,
            model: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            retry_backoff_ms: default_backoff_ms(),
        }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RecommenderConfig {
            kind: RecommenderKind::HttpChat,
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            ..Self::mock()
        }
    }

    pub fn validate(&self) -> Result<(), RecoveryError> {
        if self.kind == RecommenderKind::HttpChat {
            if self.endpoint.as_deref().is_none_or(str::is_empty) {
                return Err(RecoveryError::Config("http_chat needs an endpoint".into()));
            }
            if self.model.as_deref().is_none_or(str::is_empty) {
                return Err(RecoveryError::Config("http_chat needs a model".into()));
            }
            if self.timeout_ms == 0 {
                return Err(RecoveryError::Config("timeout must be positive".into()));
            }
        }
        Ok(())
    }

    /// Instantiates the recommender. The HTTP variant reads its API key from
    /// [`API_KEY_ENV`].
    pub fn build(&self, template: PromptTemplate) -> Result<Box<dyn Recommender>, RecoveryError> {
        self.validate()?;
        Ok(match self.kind {
            RecommenderKind::MockHotdeck => Box::new(HotDeck),
            RecommenderKind::HttpChat => {
                let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
                Box::new(ChatRecommender::new(self, template)?.with_api_key(key))
            }
        })
    }
}

/// Convenience wrapper building the configured recommender for one call.
pub fn recommend(
    query: &[Cell],
    target_feature: &str,
    schema: &Schema,
    retrieved: &RetrievedSet,
    config: &RecommenderConfig,
) -> Result<Recommendation, RecoveryError> {
    let rec = config.build(PromptTemplate::default())?;
    rec.recommend(&RecommendRequest {
        query,
        target_feature,
        schema,
        retrieved,
    })
}

/// Strips surrounding whitespace, a trailing period, and one pair of matching
/// quotes (in that order, trimming again after each step), then parses
/// according to `kind`.
pub fn parse_reply(raw: &str, kind: FeatureKind) -> Result<Cell, RecoveryError> {
    let mut s = raw.trim();
    if let Some(rest) = s.strip_suffix('.') {
        s = rest.trim_end();
    }
    for q in ['"', '\'', '`'] {
        if s.len() >= 2 && s.starts_with(q) && s.ends_with(q) {
            s = s[1..s.len() - 1].trim();
            break;
        }
    }
    if s.is_empty() {
        return Err(RecoveryError::Unparseable {
            raw: raw.to_string(),
            reason: "empty after stripping".into(),
        });
    }
    match kind {
        FeatureKind::Numeric => s
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Cell::Number)
            .ok_or_else(|| RecoveryError::Unparseable {
                raw: raw.to_string(),
                reason: "not a finite number".into(),
            }),
        FeatureKind::Categorical | FeatureKind::Text => Ok(Cell::Text(s.to_string())),
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: [ChatMessage<'a>; 1],
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    total_tokens: u64,
}

/// Counters for the HTTP transport.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TransportStats {
    pub requests: u64,
    pub attempts: u64,
    pub failures: u64,
    pub total_tokens: u64,
}

/// Chat-completions recommender. Each request is one user message built from
/// the prompt template, sent at temperature 0. Safe to share across threads.
pub struct ChatRecommender {
    agent: ureq::Agent,
    url: String,
    model: String,
    max_retries: u32,
    backoff: Duration,
    api_key: Option<String>,
    template: PromptTemplate,
    requests: AtomicU64,
    attempts: AtomicU64,
    failures: AtomicU64,
    tokens: AtomicU64,
}

impl fmt::Debug for ChatRecommender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChatRecommender")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("max_retries", &self.max_retries)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish_non_exhaustive()
    }
}

impl ChatRecommender {
    pub fn new(config: &RecommenderConfig, template: PromptTemplate) -> Result<Self, RecoveryError> {
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| RecoveryError::Config("http_chat needs an endpoint".into()))?;
        let model = config
            .model
            .clone()
            .ok_or_else(|| RecoveryError::Config("http_chat needs a model".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(ChatRecommender {
            agent,
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model,
            max_retries: config.max_retries,
            backoff: Duration::from_millis(config.retry_backoff_ms),
            api_key: None,
            template,
            requests: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            failures: AtomicU64::new(0),
            tokens: AtomicU64::new(0),
        })
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn stats(&self) -> TransportStats {
        TransportStats {
            requests: self.requests.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
            failures: self.failures.load(Ordering::Relaxed),
            total_tokens: self.tokens.load(Ordering::Relaxed),
        }
    }

    /// Sends one prompt and returns the reply text. Transport errors, 429,
    /// and 5xx responses are retried up to `max_retries` times; other
    /// statuses fail immediately.
    pub fn complete(&self, prompt: &str) -> Result<String, RecoveryError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let body = ChatRequest {
            model: &self.model,
            temperature: 0.0,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
        };
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            self.attempts.fetch_add(1, Ordering::Relaxed);
            let (message, retryable) = match self.send_once(&body) {
                Ok(text) => return Ok(text),
                Err(e) => e,
            };
            log::debug!("chat attempt {attempt} to {} failed: {message}", self.url);
            if !retryable || attempt > self.max_retries {
                self.failures.fetch_add(1, Ordering::Relaxed);
                return Err(RecoveryError::Transport {
                    attempts: attempt,
                    message,
                });
            }
            std::thread::sleep(self.backoff * attempt);
        }
    }

    fn send_once(&self, body: &ChatRequest<'_>) -> Result<String, (String, bool)> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| (e.to_string(), true))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retryable = status == 429 || status >= 500;
            return Err((format!("HTTP status {status}"), retryable));
        }
        let parsed: ChatResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| (format!("malformed response body: {e}"), false))?;
        if let Some(u) = parsed.usage {
            self.tokens.fetch_add(u.total_tokens, Ordering::Relaxed);
        }
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ("response has no choices[0].message.content".to_string(), false))
    }
}

impl Recommender for ChatRecommender {
    fn recommend(&self, request: &RecommendRequest<'_>) -> Result<Recommendation, RecoveryError> {
        let kind = request.target_kind()?;
        if request.retrieved.is_empty() {
            return Err(RecoveryError::EmptyRetrieval);
        }
        let prompt = self
            .template
            .render(request.query, request.retrieved, request.target_feature, request.schema);
        let reply = self.complete(&prompt)?;
        let first = reply.trim_start().lines().next().unwrap_or("");
        let value = parse_reply(first, kind)?;
        Ok(Recommendation {
            value,
            confidence: request.retrieved.mean_similarity().clamp(0.0, 1.0),
            source: request.retrieved.source,
            evidence: request.retrieved.clone(),
        })
    }

    fn describe(&self) -> String {
        format!("http_chat:{}", self.model)
    }
}
