//! Chat and embedding backends.
//!
//! Two implementations of each: a networked client speaking the de-facto
//! OpenAI-style HTTP protocol (`POST /chat/completions`,
//! `POST /embeddings`), and deterministic offline stand-ins — a
//! rule-matched [`ScriptedBackend`] and a hashed bag-of-tokens
//! [`HashEmbedder`] — that make every pipeline test reproducible without
//! network access.
//!
//! API keys are read from an environment variable named in
//! [`ProviderConfig`] and are never logged or serialized.

use std::sync::Mutex;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// One request/response pair kept in a backend's diagnostic call log.
/// Latency is diagnostic only and never enters episode logs.
#[derive(Clone, Debug, PartialEq)]
pub struct ChatExchange {
    pub messages: Vec<ChatMessage>,
    pub response: String,
    pub latency_s: f64,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("environment variable {0} is unset or empty (API key required)")]
    MissingApiKey(String),
    #[error("chat called with no messages")]
    EmptyMessages,
    #[error("embed called with empty text")]
    EmptyInput,
    #[error("provider returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("provider unreachable after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed provider response: {0}")]
    BadResponse(String),
    #[error("embedding dimension mismatch: expected {want}, got {got}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("invalid backend config: {0}")]
    BadConfig(String),
}

/// A chat-capable language backend.
#[async_trait]
pub trait ChatBackend: Send + Sync {
    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError>;
    /// Stable identifier recorded in logs (model name or "scripted").
    fn id(&self) -> String;
}

/// A text-embedding backend with a fixed output dimension.
#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError>;
    fn dim(&self) -> usize;
    /// Stable identifier stored in memory files for provenance checks.
    fn id(&self) -> String;
}

/// Connection settings for a networked provider.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. The key value
    /// itself is never logged.
    pub api_key_env_var: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub retry_backoff_s: f64,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            base_url: "https://api.openai.com/v1".to_string(),
            model_name: "gpt-4".to_string(),
            api_key_env_var: "OPENAI_API_KEY".to_string(),
            timeout_s: 30.0,
            max_retries: 3,
            retry_backoff_s: 0.5,
            temperature: 0.2,
            max_tokens: 1024,
        }
    }
}

impl ProviderConfig {
    fn validate(&self) -> Result<(), LlmError> {
        if self.timeout_s.is_nan() || self.timeout_s <= 0.0 {
            return Err(LlmError::BadConfig(format!("timeout_s must be > 0, got {}", self.timeout_s)));
        }
        if self.retry_backoff_s < 0.0 {
            return Err(LlmError::BadConfig(format!(
                "retry_backoff_s must be >= 0, got {}",
                self.retry_backoff_s
            )));
        }
        Ok(())
    }
}

/// API key holder whose Debug/Display never reveal the value.
struct Secret(String);

impl std::fmt::Debug for Secret {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Secret(***)")
    }
}

// ---------------------------------------------------------------------------
// Networked backend
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f32>,
}

/// Chat client for OpenAI-compatible providers.
#[derive(Debug)]
pub struct HttpChatBackend {
    cfg: ProviderConfig,
    key: Secret,
    client: reqwest::Client,
    log: Mutex<Vec<ChatExchange>>,
}

impl HttpChatBackend {
    pub fn new(cfg: ProviderConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let key = read_key(&cfg.api_key_env_var)?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpChatBackend { cfg, key: Secret(key), client, log: Mutex::new(Vec::new()) })
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.log.lock().unwrap().clone()
    }
}

fn read_key(var: &str) -> Result<String, LlmError> {
    match std::env::var(var) {
        Ok(v) if !v.trim().is_empty() => Ok(v),
        _ => Err(LlmError::MissingApiKey(var.to_string())),
    }
}

fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path)
}

/// Send a request up to `1 + max_retries` times, backing off exponentially
/// on transport errors, HTTP 429, and 5xx. Other error statuses abort
/// immediately. Returns the response body text.
async fn send_with_retries(
    client: &reqwest::Client,
    url: &str,
    key: &str,
    body: &serde_json::Value,
    cfg: &ProviderConfig,
) -> Result<String, LlmError> {
    let attempts = cfg.max_retries + 1;
    let mut last = String::new();
    for attempt in 0..attempts {
        if attempt > 0 {
            let backoff = cfg.retry_backoff_s * 2f64.powi(attempt as i32 - 1);
            tokio::time::sleep(Duration::from_secs_f64(backoff)).await;
        }
        let sent = client
            .post(url)
            .bearer_auth(key)
            .json(body)
            .send()
            .await;
        match sent {
            Err(e) => {
                last = e.to_string();
                continue;
            }
            Ok(resp) => {
                let status = resp.status();
                let text = resp.text().await.unwrap_or_default();
                if status.is_success() {
                    return Ok(text);
                }
                if status.as_u16() == 429 || status.is_server_error() {
                    last = format!("HTTP {}", status.as_u16());
                    continue;
                }
                return Err(LlmError::Http { status: status.as_u16(), body: truncate(&text, 400) });
            }
        }
    }
    Err(LlmError::Exhausted { attempts, last })
}

fn truncate(s: &str, n: usize) -> String {
    if s.len() <= n {
        return s.to_string();
    }
    let mut end = n;
    while end > 0 && !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

#[async_trait]
impl ChatBackend for HttpChatBackend {
    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::EmptyMessages);
        }
        let request = ChatRequest {
            model: &self.cfg.model_name,
            messages,
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        let body = serde_json::to_value(&request)
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let url = endpoint(&self.cfg.base_url, "chat/completions");
        let started = std::time::Instant::now();
        let text = send_with_retries(&self.client, &url, &self.key.0, &body, &self.cfg).await?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::BadResponse(format!("{e} in {}", truncate(&text, 200))))?;
        let content = parsed
            .choices
            .first()
            .map(|c| c.message.content.clone())
            .ok_or_else(|| LlmError::BadResponse("no choices in response".to_string()))?;
        self.log.lock().unwrap().push(ChatExchange {
            messages: messages.to_vec(),
            response: content.clone(),
            latency_s: started.elapsed().as_secs_f64(),
            token_counts: parsed.usage.map(|u| TokenCounts {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            }),
        });
        Ok(content)
    }

    fn id(&self) -> String {
        self.cfg.model_name.clone()
    }
}

/// Embedding client for OpenAI-compatible providers. The expected dimension
/// is declared up front and enforced on every response.
#[derive(Debug)]
pub struct HttpEmbedder {
    cfg: ProviderConfig,
    key: Secret,
    client: reqwest::Client,
    dim: usize,
}

impl HttpEmbedder {
    pub fn new(cfg: ProviderConfig, dim: usize) -> Result<Self, LlmError> {
        cfg.validate()?;
        if dim == 0 {
            return Err(LlmError::BadConfig("embedding dim must be positive".into()));
        }
        let key = read_key(&cfg.api_key_env_var)?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(HttpEmbedder { cfg, key: Secret(key), client, dim })
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyInput);
        }
        let request = EmbeddingRequest { model: &self.cfg.model_name, input: text };
        let body = serde_json::to_value(&request)
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let url = endpoint(&self.cfg.base_url, "embeddings");
        let raw = send_with_retries(&self.client, &url, &self.key.0, &body, &self.cfg).await?;
        let parsed: EmbeddingResponse = serde_json::from_str(&raw)
            .map_err(|e| LlmError::BadResponse(e.to_string()))?;
        let vector = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| LlmError::BadResponse("no embedding in response".to_string()))?;
        if vector.len() != self.dim {
            return Err(LlmError::DimensionMismatch { want: self.dim, got: vector.len() });
        }
        Ok(vector)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        self.cfg.model_name.clone()
    }
}

// ---------------------------------------------------------------------------
// Scripted backend
// ---------------------------------------------------------------------------

/// How a scripted rule matches the latest user message.
#[derive(Debug)]
pub enum Matcher {
    Substring(String),
    Regex(regex::Regex),
}

impl Matcher {
    fn matches(&self, text: &str) -> bool {
        match self {
            Matcher::Substring(s) => text.contains(s.as_str()),
            Matcher::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Debug)]
pub struct ScriptRule {
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptRule {
    pub fn substring(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule { matcher: Matcher::Substring(pattern.into()), response: response.into() }
    }

    pub fn regex(pattern: &str, response: impl Into<String>) -> Result<Self, LlmError> {
        let r = regex::Regex::new(pattern)
            .map_err(|e| LlmError::BadConfig(format!("bad rule regex {pattern:?}: {e}")))?;
        Ok(ScriptRule { matcher: Matcher::Regex(r), response: response.into() })
    }
}

/// Serialized form of a scripted backend, loadable from a JSON file.
#[derive(Debug, Serialize, Deserialize)]
pub struct ScriptFile {
    #[serde(default = "default_script_response")]
    pub default_response: String,
    #[serde(default)]
    pub rules: Vec<ScriptFileRule>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ScriptFileRule {
    #[serde(default)]
    pub substring: Option<String>,
    #[serde(default)]
    pub regex: Option<String>,
    pub response: String,
}

fn default_script_response() -> String {
    "{\"action\": \"Idle\", \"justification\": \"default scripted response\"}".to_string()
}

/// Deterministic offline chat backend: the latest user message is matched
/// against an ordered rule list; first match wins, otherwise the default
/// response is returned. Every exchange is recorded.
#[derive(Debug)]
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
    default_response: String,
    log: Mutex<Vec<ChatExchange>>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>, default_response: impl Into<String>) -> Self {
        ScriptedBackend {
            rules,
            default_response: default_response.into(),
            log: Mutex::new(Vec::new()),
        }
    }

    /// A backend that answers everything with `response`.
    pub fn constant(response: impl Into<String>) -> Self {
        ScriptedBackend::new(Vec::new(), response)
    }

    pub fn from_script(file: ScriptFile) -> Result<Self, LlmError> {
        let mut rules = Vec::new();
        for r in file.rules {
            match (r.substring, r.regex) {
                (Some(s), None) => rules.push(ScriptRule::substring(s, r.response)),
                (None, Some(p)) => rules.push(ScriptRule::regex(&p, r.response)?),
                _ => {
                    return Err(LlmError::BadConfig(
                        "each script rule needs exactly one of `substring` or `regex`".into(),
                    ))
                }
            }
        }
        Ok(ScriptedBackend::new(rules, file.default_response))
    }

    pub fn from_json(json: &str) -> Result<Self, LlmError> {
        let file: ScriptFile =
            serde_json::from_str(json).map_err(|e| LlmError::BadConfig(e.to_string()))?;
        ScriptedBackend::from_script(file)
    }

    pub fn call_count(&self) -> usize {
        self.log.lock().unwrap().len()
    }

    pub fn exchanges(&self) -> Vec<ChatExchange> {
        self.log.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    async fn chat(&self, messages: &[ChatMessage]) -> Result<String, LlmError> {
        if messages.is_empty() {
            return Err(LlmError::EmptyMessages);
        }
        let prompt = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or_else(|| messages.last().map(|m| m.content.as_str()).unwrap_or(""));
        let response = self
            .rules
            .iter()
            .find(|r| r.matcher.matches(prompt))
            .map(|r| r.response.clone())
            .unwrap_or_else(|| self.default_response.clone());
        self.log.lock().unwrap().push(ChatExchange {
            messages: messages.to_vec(),
            response: response.clone(),
            latency_s: 0.0,
            token_counts: None,
        });
        Ok(response)
    }

    fn id(&self) -> String {
        "scripted".to_string()
    }
}

// ---------------------------------------------------------------------------
// Test embedder
// ---------------------------------------------------------------------------

/// Default dimension of the hashed bag-of-tokens embedder.
pub const HASH_EMBEDDER_DIM: usize = 256;

/// Deterministic offline embedder: whitespace tokens are each hashed to one
/// of `dim` coordinates with a ±1 sign, summed, and L2-normalized. Token
/// order is irrelevant, and texts with disjoint token sets land on
/// (almost surely) disjoint coordinates, giving cosine similarity 0.
#[derive(Clone, Debug)]
pub struct HashEmbedder {
    dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        HashEmbedder { dim: HASH_EMBEDDER_DIM }
    }
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedder dimension must be positive");
        HashEmbedder { dim }
    }

    /// Synchronous core, handy for oracles and property tests.
    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f32; self.dim];
        for token in text.split_whitespace() {
            let digest = Sha256::digest(token.as_bytes());
            let idx = (u64::from_be_bytes(digest[0..8].try_into().unwrap()) % self.dim as u64)
                as usize;
            let sign = if digest[8] & 1 == 0 { 1.0 } else { -1.0 };
            acc[idx] += sign;
        }
        let norm: f32 = acc.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm < 1e-12 {
            // Colliding tokens can cancel exactly; fall back to a fixed
            // basis vector so the result is still unit length.
            acc[0] = 1.0;
        } else {
            for x in acc.iter_mut() {
                *x /= norm;
            }
        }
        acc
    }
}

#[async_trait]
impl Embedder for HashEmbedder {
    async fn embed(&self, text: &str) -> Result<Vec<f32>, LlmError> {
        if text.trim().is_empty() {
            return Err(LlmError::EmptyInput);
        }
        Ok(self.vector(text))
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn id(&self) -> String {
        format!("hash-bow-{}-v1", self.dim)
    }
}
