//! Request/response bodies for the HTTP service. Kept next to the domain
//! types so the server and client crates share one definition.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::{EmbeddingConfig, RunConfig};
use crate::harness::{HarnessError, RunSummary};
use crate::llm::ProviderConfig;
use crate::memory::{ExperienceRecord, DEFAULT_K};
use crate::scenario::{ScenarioConfig, ScenarioKind};

/// GET /health
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub service: String,
    pub version: String,
}

/// POST /scenario/build
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBuildRequest {
    pub scenario: ScenarioConfig,
    #[serde(default = "default_horizon")]
    pub horizon_s: f64,
}

fn default_horizon() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleSummary {
    pub id: String,
    /// "agent" for policy-driven vehicles, "background" for car-following.
    pub kind: String,
    pub segment: String,
    pub lane: usize,
    pub position: f64,
    pub speed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBuildResponse {
    pub kind: ScenarioKind,
    pub vehicle_count: usize,
    pub agent_ids: Vec<String>,
    pub vehicles: Vec<VehicleSummary>,
}

/// POST /episode/run
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRunRequest {
    pub config: RunConfig,
    #[serde(default)]
    pub episode_id: Option<String>,
    /// Run the reflection pass and update memory at episode end.
    #[serde(default)]
    pub reflect: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRunResponse {
    pub episode_id: String,
    pub outcome: String,
    pub frames: u32,
    pub sim_time: f64,
    pub mean_safety: Option<f64>,
    pub mean_efficiency: Option<f64>,
    pub mean_combined: Option<f64>,
    /// The full episode log, line-delimited JSON.
    pub jsonl: String,
}

/// POST /train
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRequest {
    pub config: RunConfig,
    pub episodes: u32,
    pub seed: u64,
    /// Directory episode logs are written into; omitted → no logs on disk.
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResponse {
    pub summary: RunSummary,
    /// The summary as a comma-separated table.
    pub csv: String,
    pub log_files: Vec<PathBuf>,
    pub memory_len: usize,
}

/// POST /test
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestRequest {
    pub config: RunConfig,
    pub batch_seed: u64,
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResponse {
    pub summary: RunSummary,
    pub csv: String,
    pub log_files: Vec<PathBuf>,
}

/// POST /memory/query
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueryRequest {
    pub path: PathBuf,
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub provider: ProviderConfig,
}

fn default_k() -> usize {
    DEFAULT_K
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryHit {
    pub record: ExperienceRecord,
    pub similarity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryQueryResponse {
    pub hits: Vec<MemoryHit>,
    pub store_len: usize,
}

/// POST /memory/stats
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryStatsRequest {
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryStatsResponse {
    pub len: usize,
    pub embedder_id: String,
    pub dim: usize,
}

/// POST /replay
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub log_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayResponse {
    pub episode_id: String,
    pub kind: ScenarioKind,
    pub outcome: String,
    pub detail: String,
    pub frames: u32,
    pub sim_time: f64,
    pub agent_ids: Vec<String>,
    pub mean_safety: Option<f64>,
    pub mean_efficiency: Option<f64>,
    pub mean_combined: Option<f64>,
    /// Human-readable playback, one line per row.
    pub lines: Vec<String>,
}

/// POST /render
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub log_path: PathBuf,
    /// Half-open frame range, `a..b`, or a single frame number.
    pub frames: String,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub files: Vec<PathBuf>,
}

/// Error category carried in failure responses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApiErrorKind {
    /// The request itself is unacceptable (bad config, bad range, bad file).
    Validation,
    /// The service could not carry the work out (I/O, backend, memory).
    Infrastructure,
    /// A bug in the service.
    Internal,
}

impl ApiErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ApiErrorKind::Validation => "validation",
            ApiErrorKind::Infrastructure => "infrastructure",
            ApiErrorKind::Internal => "internal",
        }
    }
}

/// Body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiErrorBody {
    pub kind: ApiErrorKind,
    pub message: String,
}

impl ApiErrorBody {
    pub fn new(kind: ApiErrorKind, message: impl Into<String>) -> Self {
        ApiErrorBody { kind, message: message.into() }
    }

    /// Classify a harness error and pick the matching HTTP status code.
    pub fn from_harness(err: &HarnessError) -> (u16, ApiErrorBody) {
        if err.is_validation() {
            (400, ApiErrorBody::new(ApiErrorKind::Validation, err.to_string()))
        } else {
            (500, ApiErrorBody::new(ApiErrorKind::Infrastructure, err.to_string()))
        }
    }
}
