//! HTTP face of the driving-agent harness: scenario building, episode
//! runs, training and evaluation batches, memory queries, replay, and SVG
//! rendering, all over JSON.

use std::path::Path;

use axum::extract::Json;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;

use drivemind_core::config::RunConfig;
use drivemind_core::harness::log::EpisodeLog;
use drivemind_core::harness::{train_episode_id, EpisodeRunner, HarnessError, MemoryBank};
use drivemind_core::memory::MemoryStore;
use drivemind_core::render::{parse_frame_range, render_range};
use drivemind_core::sim::{SimEvent, VehicleKind};
use drivemind_core::wire::{
    ApiErrorBody, ApiErrorKind, EpisodeRunRequest, EpisodeRunResponse, HealthResponse,
    MemoryHit, MemoryQueryRequest, MemoryQueryResponse, MemoryStatsRequest, MemoryStatsResponse,
    RenderRequest, RenderResponse, ReplayRequest, ReplayResponse, ScenarioBuildRequest,
    ScenarioBuildResponse, TestRequest, TestResponse, TrainRequest, TrainResponse,
    VehicleSummary,
};

/// Error wrapper that renders as a JSON body with a matching status code.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ApiErrorBody,
}

impl From<HarnessError> for ApiError {
    fn from(err: HarnessError) -> Self {
        let (status, body) = ApiErrorBody::from_harness(&err);
        ApiError {
            status: StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
            body,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn validation(message: impl Into<String>) -> ApiError {
    ApiError {
        status: StatusCode::BAD_REQUEST,
        body: ApiErrorBody::new(ApiErrorKind::Validation, message),
    }
}

fn infrastructure(message: impl Into<String>) -> ApiError {
    ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        body: ApiErrorBody::new(ApiErrorKind::Infrastructure, message),
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// The full route table.
pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/scenario/build", post(scenario_build))
        .route("/episode/run", post(episode_run))
        .route("/train", post(train))
        .route("/test", post(test_batch))
        .route("/memory/query", post(memory_query))
        .route("/memory/stats", post(memory_stats))
        .route("/replay", post(replay))
        .route("/render", post(render))
}

/// Serve the router on an already-bound listener until the task is dropped.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
        service: "drivemind-service".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

async fn scenario_build(Json(req): Json<ScenarioBuildRequest>) -> ApiResult<ScenarioBuildResponse> {
    let world = drivemind_core::scenario::build_world(&req.scenario, req.horizon_s)
        .map_err(HarnessError::from)?;
    let vehicles: Vec<VehicleSummary> = world
        .vehicles
        .values()
        .map(|v| VehicleSummary {
            id: v.id.to_string(),
            kind: match v.kind {
                VehicleKind::LlmAgent => "agent".to_string(),
                VehicleKind::IdmBackground => "background".to_string(),
            },
            segment: v.segment.to_string(),
            lane: v.lane_index,
            position: v.s,
            speed: v.v,
        })
        .collect();
    Ok(Json(ScenarioBuildResponse {
        kind: req.scenario.kind,
        vehicle_count: vehicles.len(),
        agent_ids: world.agent_ids().iter().map(|id| id.to_string()).collect(),
        vehicles,
    }))
}

/// Construct backends, bank, and runner from a run configuration, then hand
/// them to `body`. Everything the handlers share lives here.
async fn with_runner<T, F, Fut>(config: &RunConfig, body: F) -> Result<T, ApiError>
where
    F: FnOnce(drivemind_core::harness::EpisodeConfig, MemoryBank) -> Fut,
    Fut: std::future::Future<Output = Result<T, ApiError>>,
{
    config.validate()?;
    let ecfg = config.episode_config();
    let embedder = config.build_embedder()?;
    let bank = MemoryBank::open(ecfg.memory_mode, ecfg.memory_path.as_deref(), embedder.as_ref())
        .map_err(HarnessError::from)?;
    body(ecfg, bank).await
}

async fn episode_run(Json(req): Json<EpisodeRunRequest>) -> ApiResult<EpisodeRunResponse> {
    let chat = req.config.build_chat_backend()?;
    let embedder = req.config.build_embedder()?;
    let log = with_runner(&req.config, |ecfg, mut bank| async move {
        let episode_id = req
            .episode_id
            .unwrap_or_else(|| train_episode_id(ecfg.scenario.kind, ecfg.scenario.seed, 0));
        let runner = EpisodeRunner::new(chat.as_ref(), embedder.as_ref());
        let log = runner.run_episode(&ecfg, &episode_id, &mut bank, req.reflect).await?;
        if req.reflect {
            bank.save().map_err(HarnessError::from)?;
        }
        Ok(log)
    })
    .await?;
    let means = log.mean_scores();
    Ok(Json(EpisodeRunResponse {
        episode_id: log.header.episode_id.clone(),
        outcome: log.outcome.outcome.name().to_string(),
        frames: log.outcome.frames,
        sim_time: log.outcome.sim_time,
        mean_safety: means.map(|m| m.safety),
        mean_efficiency: means.map(|m| m.efficiency),
        mean_combined: means.map(|m| m.combined),
        jsonl: log.to_jsonl(),
    }))
}

fn prepare_log_dir(dir: Option<&Path>) -> Result<(), ApiError> {
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)
            .map_err(|e| infrastructure(format!("cannot create {}: {e}", dir.display())))?;
    }
    Ok(())
}

fn log_files(dir: Option<&Path>, summary: &drivemind_core::harness::RunSummary) -> Vec<std::path::PathBuf> {
    match dir {
        None => Vec::new(),
        Some(dir) => summary
            .rows
            .iter()
            .map(|row| dir.join(format!("{}.jsonl", row.episode_id)))
            .collect(),
    }
}

async fn train(Json(req): Json<TrainRequest>) -> ApiResult<TrainResponse> {
    let chat = req.config.build_chat_backend()?;
    let embedder = req.config.build_embedder()?;
    prepare_log_dir(req.log_dir.as_deref())?;
    let log_dir = req.log_dir.clone();
    let (summary, memory_len) = with_runner(&req.config, |ecfg, mut bank| async move {
        let runner = EpisodeRunner::new(chat.as_ref(), embedder.as_ref());
        let summary = runner
            .train(&ecfg, req.episodes as usize, req.seed, &mut bank, log_dir.as_deref())
            .await?;
        Ok((summary, bank.total_len()))
    })
    .await?;
    Ok(Json(TrainResponse {
        csv: summary.to_csv(),
        log_files: log_files(req.log_dir.as_deref(), &summary),
        memory_len,
        summary,
    }))
}

async fn test_batch(Json(req): Json<TestRequest>) -> ApiResult<TestResponse> {
    let chat = req.config.build_chat_backend()?;
    let embedder = req.config.build_embedder()?;
    prepare_log_dir(req.log_dir.as_deref())?;
    let log_dir = req.log_dir.clone();
    let summary = with_runner(&req.config, |ecfg, mut bank| async move {
        let runner = EpisodeRunner::new(chat.as_ref(), embedder.as_ref());
        Ok(runner.test(&ecfg, req.batch_seed, &mut bank, log_dir.as_deref()).await?)
    })
    .await?;
    Ok(Json(TestResponse {
        csv: summary.to_csv(),
        log_files: log_files(req.log_dir.as_deref(), &summary),
        summary,
    }))
}

fn open_existing_store(path: &Path, expect_embedder: Option<&str>) -> Result<MemoryStore, ApiError> {
    if !path.exists() {
        return Err(validation(format!("no memory store at {}", path.display())));
    }
    MemoryStore::load(path, expect_embedder)
        .map_err(|e| infrastructure(format!("cannot load {}: {e}", path.display())))
}

async fn memory_query(Json(req): Json<MemoryQueryRequest>) -> ApiResult<MemoryQueryResponse> {
    let cfg = RunConfig {
        embedding: req.embedding.clone(),
        provider: req.provider.clone(),
        ..RunConfig::default()
    };
    let embedder = cfg.build_embedder()?;
    let store = open_existing_store(&req.path, Some(&embedder.id()))?;
    let retrieved = store
        .retrieve(&req.query, req.k, embedder.as_ref())
        .await
        .map_err(HarnessError::from)?;
    Ok(Json(MemoryQueryResponse {
        store_len: store.len(),
        hits: retrieved
            .items
            .into_iter()
            .map(|(record, similarity)| MemoryHit { record, similarity })
            .collect(),
    }))
}

async fn memory_stats(Json(req): Json<MemoryStatsRequest>) -> ApiResult<MemoryStatsResponse> {
    let store = open_existing_store(&req.path, None)?;
    Ok(Json(MemoryStatsResponse {
        len: store.len(),
        embedder_id: store.embedder_id().to_string(),
        dim: store.dim(),
    }))
}

fn event_line(event: &SimEvent) -> String {
    match event {
        SimEvent::InfeasibleLaneChange { id, action } => {
            format!("{id} requested {} with no adjacent lane; kept straight", action.name())
        }
        SimEvent::SegmentTransition { id, from, to } => {
            format!("{id} moved from segment {from} to {to}")
        }
        SimEvent::LaneChangeCompleted { id, segment, lane } => {
            format!("{id} finished its lane change on {segment}, lane {lane}")
        }
        SimEvent::Collision { a, b, time } => format!("collision between {a} and {b} at {time:.1} s"),
    }
}

fn open_log(path: &Path) -> Result<EpisodeLog, ApiError> {
    if !path.exists() {
        return Err(validation(format!("no episode log at {}", path.display())));
    }
    Ok(EpisodeLog::read_from(path)?)
}

async fn replay(Json(req): Json<ReplayRequest>) -> ApiResult<ReplayResponse> {
    let log = open_log(&req.log_path)?;
    drivemind_core::render::replay_worlds(&log)?;

    let mut lines = Vec::new();
    for step in &log.steps {
        lines.push(format!("frame {:>3}  t = {:>5.1} s", step.frame, step.sim_time));
        for d in log.decisions.iter().filter(|d| d.frame == step.frame) {
            let plan = match d.plan_source {
                drivemind_core::agent::PlanSource::Generated => "new plan",
                drivemind_core::agent::PlanSource::Kept => "kept plan",
                drivemind_core::agent::PlanSource::Replanned => "replanned",
            };
            lines.push(format!(
                "  {}: {} ({}), safety {:.1}, efficiency {:.1}",
                d.agent_id,
                d.action.name(),
                plan,
                d.score.safety,
                d.score.efficiency
            ));
        }
        for event in &step.events {
            lines.push(format!("  event: {}", event_line(event)));
        }
    }
    lines.push(format!(
        "outcome: {} after {} frames ({:.1} s) — {}",
        log.outcome.outcome.name(),
        log.outcome.frames,
        log.outcome.sim_time,
        log.outcome.detail
    ));

    let means = log.mean_scores();
    Ok(Json(ReplayResponse {
        episode_id: log.header.episode_id.clone(),
        kind: log.header.scenario.kind,
        outcome: log.outcome.outcome.name().to_string(),
        detail: log.outcome.detail.clone(),
        frames: log.outcome.frames,
        sim_time: log.outcome.sim_time,
        agent_ids: log.header.agent_ids.iter().map(|id| id.to_string()).collect(),
        mean_safety: means.map(|m| m.safety),
        mean_efficiency: means.map(|m| m.efficiency),
        mean_combined: means.map(|m| m.combined),
        lines,
    }))
}

async fn render(Json(req): Json<RenderRequest>) -> ApiResult<RenderResponse> {
    let log = open_log(&req.log_path)?;
    let range = parse_frame_range(&req.frames)?;
    std::fs::create_dir_all(&req.out_dir)
        .map_err(|e| infrastructure(format!("cannot create {}: {e}", req.out_dir.display())))?;
    let files = render_range(&log, range, &req.out_dir)?;
    Ok(Json(RenderResponse { files }))
}
