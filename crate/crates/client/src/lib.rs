//! Thin typed client for the drivemind HTTP service.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use drivemind_core::wire::{
    ApiErrorBody, ApiErrorKind, EpisodeRunRequest, EpisodeRunResponse, HealthResponse,
    MemoryQueryRequest, MemoryQueryResponse, MemoryStatsRequest, MemoryStatsResponse,
    RenderRequest, RenderResponse, ReplayRequest, ReplayResponse, ScenarioBuildRequest,
    ScenarioBuildResponse, TestRequest, TestResponse, TrainRequest, TrainResponse,
};

/// Client-side failure, split the same way the service splits its errors so
/// callers can choose an exit path without string matching.
#[derive(Debug, Error)]
pub enum ClientError {
    /// The request was rejected as invalid (bad config, bad range, bad file).
    #[error("{0}")]
    Validation(String),
    /// The service was unreachable or failed carrying the work out.
    #[error("{0}")]
    Infrastructure(String),
}

impl ClientError {
    pub fn is_validation(&self) -> bool {
        matches!(self, ClientError::Validation(_))
    }
}

/// Turn one HTTP exchange into a typed result.
fn interpret<T: DeserializeOwned>(
    path: &str,
    status: reqwest::StatusCode,
    text: &str,
) -> Result<T, ClientError> {
    if status.is_success() {
        return serde_json::from_str(text).map_err(|e| {
            ClientError::Infrastructure(format!("unreadable response from {path}: {e}"))
        });
    }
    match serde_json::from_str::<ApiErrorBody>(text) {
        Ok(body) => match body.kind {
            ApiErrorKind::Validation => Err(ClientError::Validation(body.message)),
            ApiErrorKind::Infrastructure | ApiErrorKind::Internal => {
                Err(ClientError::Infrastructure(body.message))
            }
        },
        // No structured body (e.g. the request never reached a handler):
        // classify by status class.
        Err(_) if status.is_client_error() => {
            Err(ClientError::Validation(format!("{path}: {status}: {text}")))
        }
        Err(_) => Err(ClientError::Infrastructure(format!("{path}: {status}: {text}"))),
    }
}

/// Typed handle on one service instance.
pub struct Client {
    base_url: String,
    http: reqwest::Client,
}

impl Client {
    /// `base_url` is scheme + host + port, e.g. `http://127.0.0.1:8080`.
    pub fn new(base_url: impl Into<String>) -> Client {
        let mut base = base_url.into();
        while base.ends_with('/') {
            base.pop();
        }
        Client { base_url: base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base_url))
            .send()
            .await
            .map_err(|e| ClientError::Infrastructure(format!("request to {path} failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ClientError::Infrastructure(format!("reading {path} failed: {e}")))?;
        interpret(path, status, &text)
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        req: &Req,
    ) -> Result<Resp, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base_url))
            .json(req)
            .send()
            .await
            .map_err(|e| ClientError::Infrastructure(format!("request to {path} failed: {e}")))?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ClientError::Infrastructure(format!("reading {path} failed: {e}")))?;
        interpret(path, status, &text)
    }

    pub async fn health(&self) -> Result<HealthResponse, ClientError> {
        self.get("/health").await
    }

    pub async fn build_scenario(
        &self,
        req: &ScenarioBuildRequest,
    ) -> Result<ScenarioBuildResponse, ClientError> {
        self.post("/scenario/build", req).await
    }

    pub async fn run_episode(
        &self,
        req: &EpisodeRunRequest,
    ) -> Result<EpisodeRunResponse, ClientError> {
        self.post("/episode/run", req).await
    }

    pub async fn train(&self, req: &TrainRequest) -> Result<TrainResponse, ClientError> {
        self.post("/train", req).await
    }

    pub async fn test(&self, req: &TestRequest) -> Result<TestResponse, ClientError> {
        self.post("/test", req).await
    }

    pub async fn memory_query(
        &self,
        req: &MemoryQueryRequest,
    ) -> Result<MemoryQueryResponse, ClientError> {
        self.post("/memory/query", req).await
    }

    pub async fn memory_stats(
        &self,
        req: &MemoryStatsRequest,
    ) -> Result<MemoryStatsResponse, ClientError> {
        self.post("/memory/stats", req).await
    }

    pub async fn replay(&self, req: &ReplayRequest) -> Result<ReplayResponse, ClientError> {
        self.post("/replay", req).await
    }

    pub async fn render(&self, req: &RenderRequest) -> Result<RenderResponse, ClientError> {
        self.post("/render", req).await
    }
}
