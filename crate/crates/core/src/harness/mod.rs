//! Episode orchestration.
//!
//! One decision frame runs as: every agent (in id order) gets its scene
//! description, a top-k memory retrieval, and a reasoning pass; then a
//! single world step applies all actions simultaneously; then each agent's
//! decision is scored against the post-step world. When the episode ends,
//! a reflection pass flags poor decisions, asks the backend to correct
//! them, and folds the keepers into the experience memory.
//!
//! Two fidelity switches exist: `sequential_stepping` steps the world once
//! per agent (each agent sees the world as its predecessors left it, the
//! other agents idling through that sub-step), and `concurrent_agents`
//! overlaps the backend calls of one frame — outputs are identical to the
//! sequential order because agents share no mutable state while reasoning.

pub mod log;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rand::SeedableRng as _;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{planning_process_text, AgentDecision, DrivingAgent};
use crate::llm::{ChatBackend, Embedder, LlmError, ScriptRule, ScriptedBackend};
use crate::memory::{
    FinalDecision, MemoryError, MemoryStore, RetrievedExperiences, DEFAULT_K,
};
use crate::perception::SceneDescription;
use crate::prompts;
use crate::reflection::{
    correct, flag_decisions, score_step, update_memory, DecisionRecord, ReflectionThresholds,
    RetentionReport, ScorePair,
};
use crate::scenario::{self, judge_outcome, Outcome, ScenarioConfig, ScenarioError, ScenarioKind};
use crate::sim::{MetaAction, SimError, VehicleId, World};

use log::{
    DecisionEntry, EpisodeLog, EpisodeOutcome, LogHeader, OutcomeEntry, ReflectionEntry,
    RetrievedRef, StepEntry, LOG_FORMAT_VERSION,
};

/// Evaluation batches always run this many episodes.
pub const TEST_EPISODES: usize = 20;

/// How experience memory is shared between agents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MemoryMode {
    /// One store; every agent reads and writes it.
    #[default]
    Shared,
    /// One store per agent, persisted as siblings of the base path.
    PerAgent,
    /// No retrieval, no retention.
    None,
}

impl MemoryMode {
    pub fn name(self) -> &'static str {
        match self {
            MemoryMode::Shared => "shared",
            MemoryMode::PerAgent => "per-agent",
            MemoryMode::None => "none",
        }
    }
}

impl std::fmt::Display for MemoryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MemoryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "shared" => Ok(MemoryMode::Shared),
            "per-agent" | "per_agent" => Ok(MemoryMode::PerAgent),
            "none" => Ok(MemoryMode::None),
            other => Err(format!(
                "unknown memory mode {other:?} (expected shared, per-agent, or none)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Backend(#[from] LlmError),
    #[error("bad episode log: {0}")]
    LogFormat(String),
    #[error("render failed: {0}")]
    Render(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// True for errors the caller caused (bad config, bad log, bad range)
    /// as opposed to runtime infrastructure trouble.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            HarnessError::Config(_)
                | HarnessError::Scenario(_)
                | HarnessError::LogFormat(_)
                | HarnessError::Render(_)
        )
    }
}

/// Everything one episode run needs besides the backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub scenario: ScenarioConfig,
    /// Episode horizon, seconds.
    pub horizon_s: f64,
    pub retrieval_k: usize,
    pub memory_mode: MemoryMode,
    pub memory_path: Option<PathBuf>,
    pub thresholds: ReflectionThresholds,
    /// Step the world once per agent instead of once per frame.
    pub sequential_stepping: bool,
    /// Overlap backend calls of one frame; outputs are unchanged.
    pub concurrent_agents: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            scenario: ScenarioConfig::default(),
            horizon_s: 30.0,
            retrieval_k: DEFAULT_K,
            memory_mode: MemoryMode::Shared,
            memory_path: None,
            thresholds: ReflectionThresholds::default(),
            sequential_stepping: false,
            concurrent_agents: false,
        }
    }
}

impl EpisodeConfig {
    pub fn new(scenario: ScenarioConfig) -> EpisodeConfig {
        EpisodeConfig { scenario, ..EpisodeConfig::default() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.horizon_s.is_nan() || self.horizon_s <= 0.0 {
            return Err(HarnessError::Config(format!(
                "horizon_s must be positive, got {}",
                self.horizon_s
            )));
        }
        Ok(())
    }
}

pub fn scenario_slug(kind: ScenarioKind) -> &'static str {
    match kind {
        ScenarioKind::RampMerge => "ramp_merge",
        ScenarioKind::Roundabout => "roundabout",
    }
}

pub fn train_episode_id(kind: ScenarioKind, seed: u64, index: usize) -> String {
    format!("{}-s{}-e{:03}", scenario_slug(kind), seed, index)
}

pub fn test_episode_id(kind: ScenarioKind, batch_seed: u64, index: usize) -> String {
    format!("{}-b{}-e{:02}", scenario_slug(kind), batch_seed, index)
}

/// Sibling file a per-agent store lives in: `mem.jsonl` becomes
/// `mem.a3.jsonl` for agent v3.
pub fn agent_store_path(base: &Path, agent: VehicleId) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("memory");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.a{}.{ext}", agent.0),
        None => format!("{stem}.a{}", agent.0),
    };
    base.with_file_name(name)
}

/// The episode-facing view of experience memory: one shared store, one
/// store per agent, or nothing, behind a single retrieval/retention API.
#[derive(Debug)]
pub struct MemoryBank {
    mode: MemoryMode,
    path: Option<PathBuf>,
    shared: Option<MemoryStore>,
    per_agent: BTreeMap<VehicleId, MemoryStore>,
    retrievals: usize,
}

impl MemoryBank {
    pub fn open(
        mode: MemoryMode,
        path: Option<&Path>,
        embedder: &dyn Embedder,
    ) -> Result<MemoryBank, MemoryError> {
        let mut bank = MemoryBank {
            mode,
            path: path.map(Path::to_path_buf),
            shared: None,
            per_agent: BTreeMap::new(),
            retrievals: 0,
        };
        if mode == MemoryMode::Shared {
            bank.shared = Some(match &bank.path {
                Some(p) => MemoryStore::open(p, embedder)?,
                None => MemoryStore::for_embedder(embedder),
            });
        }
        Ok(bank)
    }

    /// In per-agent mode, make sure each agent has a store (loading an
    /// existing file when the bank is backed by one).
    pub fn ensure_agents(
        &mut self,
        agents: &[VehicleId],
        embedder: &dyn Embedder,
    ) -> Result<(), MemoryError> {
        if self.mode != MemoryMode::PerAgent {
            return Ok(());
        }
        for &a in agents {
            if self.per_agent.contains_key(&a) {
                continue;
            }
            let store = match &self.path {
                Some(p) => MemoryStore::open(&agent_store_path(p, a), embedder)?,
                None => MemoryStore::for_embedder(embedder),
            };
            self.per_agent.insert(a, store);
        }
        Ok(())
    }

    pub async fn retrieve(
        &mut self,
        agent: VehicleId,
        query: &str,
        k: usize,
        embedder: &dyn Embedder,
    ) -> Result<RetrievedExperiences, MemoryError> {
        let store = match self.mode {
            MemoryMode::None => {
                return Ok(RetrievedExperiences { items: Vec::new(), query: query.to_string() })
            }
            MemoryMode::Shared => self.shared.as_ref(),
            MemoryMode::PerAgent => self.per_agent.get(&agent),
        };
        let store = store
            .ok_or_else(|| MemoryError::Malformed(format!("no memory store for agent {agent}")))?;
        self.retrievals += 1;
        store.retrieve(query, k, embedder).await
    }

    /// Run retention for one finished episode against the right store(s).
    /// In per-agent mode each store only ever sees its own agent's records;
    /// the returned report sums the per-store reports (inserted ids are
    /// per-store and may repeat across files).
    pub async fn apply_reflection(
        &mut self,
        episode_id: &str,
        records: &[DecisionRecord],
        flags: &[crate::reflection::ReflectionFlag],
        corrections: &[crate::reflection::CorrectedDecision],
        thresholds: &ReflectionThresholds,
        embedder: &dyn Embedder,
    ) -> Result<RetentionReport, MemoryError> {
        match self.mode {
            MemoryMode::None => Ok(RetentionReport::default()),
            MemoryMode::Shared => {
                let store = self
                    .shared
                    .as_mut()
                    .ok_or_else(|| MemoryError::Malformed("shared store missing".into()))?;
                update_memory(store, episode_id, records, flags, corrections, thresholds, embedder)
                    .await
            }
            MemoryMode::PerAgent => {
                let mut total = RetentionReport::default();
                for (agent, store) in self.per_agent.iter_mut() {
                    let recs: Vec<DecisionRecord> =
                        records.iter().filter(|r| r.agent_id == *agent).cloned().collect();
                    let fl: Vec<_> =
                        flags.iter().filter(|f| f.agent_id == *agent).copied().collect();
                    let co: Vec<_> = corrections
                        .iter()
                        .filter(|c| c.agent_id == *agent)
                        .cloned()
                        .collect();
                    if recs.is_empty() && co.is_empty() {
                        continue;
                    }
                    let r = update_memory(
                        store, episode_id, &recs, &fl, &co, thresholds, embedder,
                    )
                    .await?;
                    total.retained_unflagged += r.retained_unflagged;
                    total.retained_corrected += r.retained_corrected;
                    total.discarded += r.discarded;
                    total.inserted_ids.extend(r.inserted_ids);
                }
                Ok(total)
            }
        }
    }

    /// Persist every store the bank is backed by. A bank without a path is
    /// in-memory only and saving is a no-op.
    pub fn save(&self) -> Result<(), MemoryError> {
        let Some(path) = &self.path else { return Ok(()) };
        if let Some(s) = &self.shared {
            s.save(path)?;
        }
        for (agent, store) in &self.per_agent {
            store.save(&agent_store_path(path, *agent))?;
        }
        Ok(())
    }

    pub fn mode(&self) -> MemoryMode {
        self.mode
    }

    /// Number of retrieval calls served (always zero in `none` mode).
    pub fn retrieval_calls(&self) -> usize {
        self.retrievals
    }

    /// Total records across all stores.
    pub fn total_len(&self) -> usize {
        self.shared.as_ref().map_or(0, MemoryStore::len)
            + self.per_agent.values().map(MemoryStore::len).sum::<usize>()
    }

    pub fn shared_store(&self) -> Option<&MemoryStore> {
        self.shared.as_ref()
    }

    pub fn agent_store(&self, agent: VehicleId) -> Option<&MemoryStore> {
        self.per_agent.get(&agent)
    }
}

/// Scripted chat policy that drives both scenarios competently: merge or
/// brake when someone is close ahead, otherwise hold the lane. Useful as a
/// deterministic stand-in for a live model.
pub fn good_driver_backend() -> ScriptedBackend {
    let plan = serde_json::json!({
        "plans": [
            {
                "id": 1,
                "description": "merge into the main flow when a safe gap is available, otherwise hold the lane and match traffic speed",
                "pros": "reaches the goal without forcing other drivers to brake",
                "cons": "may wait briefly for a gap",
                "difficulty": "medium",
                "safety": 9,
                "efficiency": 8
            },
            {
                "id": 2,
                "description": "force the maneuver immediately regardless of surrounding traffic",
                "pros": "fast",
                "cons": "risks a collision",
                "difficulty": "high",
                "safety": 2,
                "efficiency": 9
            }
        ],
        "ranking": [1, 2],
        "selected": 1
    })
    .to_string();
    let mut rules = vec![
        ScriptRule::substring("infer its likely intention", "[]"),
        ScriptRule::substring("Brainstorm", plan),
        ScriptRule::substring("still feasible", "keep"),
    ];
    // A vehicle in the ego's own lane column within 15 m ahead: brake. One
    // rule per column, anchored on the ego line ("lane column N, position")
    // and a neighbor line in the same column.
    for col in 0..3 {
        rules.push(
            ScriptRule::regex(
                &format!(
                    r"(?s)lane column {col}, position.*- v\d+: lane column {col}, (1[0-4]|[0-9])\.[0-9] m ahead.*Choose exactly one meta-action"
                ),
                r#"{"action": "Decelerate", "justification": "keep distance to the leader ahead"}"#,
            )
            .expect("static regex"),
        );
    }
    rules.extend([
        // On the ramp with main-road traffic too close to the merge gap
        // (alongside, within 8 m ahead, or within 12 m behind): drop back
        // and wait for the gap.
        ScriptRule::regex(
            r"(?s)on segment ramp.*- v\d+: lane column 1, (alongside|(1[0-1]|[0-9])\.[0-9] m behind|[0-7]\.[0-9] m ahead).*Choose exactly one meta-action",
            r#"{"action": "Decelerate", "justification": "let the main-road traffic pass before merging"}"#,
        )
        .expect("static regex"),
        // Otherwise, on the ramp: merge (the maneuver starts only where the
        // geometry allows it).
        ScriptRule::regex(
            r"(?s)on segment ramp.*Choose exactly one meta-action",
            r#"{"action": "TurnLeft", "justification": "merge onto the main road before the ramp ends"}"#,
        )
        .expect("static regex"),
        // Rolling well below traffic speed with a clear lane: speed up.
        ScriptRule::regex(
            r"(?s)position \d+\.\d m, speed (1[0-7]|[0-9])\.[0-9] m/s.*Choose exactly one meta-action",
            r#"{"action": "Accelerate", "justification": "resume traffic speed"}"#,
        )
        .expect("static regex"),
        ScriptRule::substring(
            "Choose exactly one meta-action",
            r#"{"action": "Idle", "justification": "hold lane at current speed"}"#,
        ),
    ]);
    ScriptedBackend::new(rules, r#"{"action": "Idle", "justification": "default"}"#)
}

/// One evaluated episode in a run table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub index: usize,
    pub episode_id: String,
    pub seed: u64,
    pub outcome: EpisodeOutcome,
    pub frames: u32,
    pub mean_safety: f64,
    pub mean_efficiency: f64,
    pub mean_combined: f64,
    /// Total memory records after this episode.
    pub memory_len: usize,
}

impl EpisodeRow {
    fn from_log(index: usize, seed: u64, log: &EpisodeLog, memory_len: usize) -> EpisodeRow {
        let mean = log.mean_scores().unwrap_or(ScorePair::new(0.0, 0.0));
        EpisodeRow {
            index,
            episode_id: log.header.episode_id.clone(),
            seed,
            outcome: log.outcome.outcome,
            frames: log.outcome.frames,
            mean_safety: mean.safety,
            mean_efficiency: mean.efficiency,
            mean_combined: mean.combined,
            memory_len,
        }
    }
}

/// Aggregate result of a training or evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Episodes that produced a driving verdict (infrastructure failures
    /// are counted separately and excluded from the rate).
    pub episodes: usize,
    pub successes: usize,
    pub collision_failures: usize,
    pub timeout_failures: usize,
    pub infrastructure_failures: usize,
    /// successes / episodes; 0 when no episode produced a verdict.
    pub success_rate: f64,
    /// Means over successful episodes only; 0 when there were none.
    pub mean_safety: f64,
    pub mean_efficiency: f64,
    pub mean_combined: f64,
    pub rows: Vec<EpisodeRow>,
}

impl RunSummary {
    pub fn from_rows(rows: Vec<EpisodeRow>) -> RunSummary {
        let mut counts = [0usize; 4];
        let (mut s, mut e, mut c) = (0.0, 0.0, 0.0);
        for row in &rows {
            let slot = match row.outcome {
                EpisodeOutcome::Success => 0,
                EpisodeOutcome::CollisionFailure => 1,
                EpisodeOutcome::TimeoutFailure => 2,
                EpisodeOutcome::InfrastructureFailure => 3,
            };
            counts[slot] += 1;
            if row.outcome == EpisodeOutcome::Success {
                s += row.mean_safety;
                e += row.mean_efficiency;
                c += row.mean_combined;
            }
        }
        let scored = counts[0] + counts[1] + counts[2];
        let successes = counts[0];
        let div = |num: f64, den: usize| if den == 0 { 0.0 } else { num / den as f64 };
        RunSummary {
            episodes: scored,
            successes,
            collision_failures: counts[1],
            timeout_failures: counts[2],
            infrastructure_failures: counts[3],
            success_rate: div(successes as f64, scored),
            mean_safety: div(s, successes),
            mean_efficiency: div(e, successes),
            mean_combined: div(c, successes),
            rows,
        }
    }

    /// Per-episode table, one row per episode.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "episode,episode_id,seed,outcome,frames,mean_safety,mean_efficiency,mean_combined,memory_len\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3},{:.3},{:.3},{}\n",
                r.index,
                r.episode_id,
                r.seed,
                r.outcome.name(),
                r.frames,
                r.mean_safety,
                r.mean_efficiency,
                r.mean_combined,
                r.memory_len,
            ));
        }
        out
    }
}

struct Staged {
    scene: SceneDescription,
    retrieved: Vec<RetrievedRef>,
    few_shot: String,
}

/// Runs episodes against a chat backend and an embedder.
pub struct EpisodeRunner<'a> {
    pub chat: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
}

impl<'a> EpisodeRunner<'a> {
    pub fn new(chat: &'a dyn ChatBackend, embedder: &'a dyn Embedder) -> EpisodeRunner<'a> {
        EpisodeRunner { chat, embedder }
    }

    async fn stage(
        &self,
        agent: &mut DrivingAgent,
        world: &World,
        cfg: &EpisodeConfig,
        bank: &mut MemoryBank,
    ) -> Result<Staged, HarnessError> {
        let scene = agent.observe(world)?;
        let hits = bank.retrieve(agent.id, &scene.text, cfg.retrieval_k, self.embedder).await?;
        let few_shot = hits.prompt_text();
        let retrieved = hits
            .items
            .iter()
            .map(|(r, sim)| RetrievedRef { record_id: r.record_id, similarity: *sim })
            .collect();
        Ok(Staged { scene, retrieved, few_shot })
    }

    /// Run one full episode. Backend hard failures do not error: the
    /// episode is cut short and logged with an infrastructure-failure
    /// outcome so batch runs can carry on.
    pub async fn run_episode(
        &self,
        cfg: &EpisodeConfig,
        episode_id: &str,
        bank: &mut MemoryBank,
        reflect: bool,
    ) -> Result<EpisodeLog, HarnessError> {
        cfg.validate()?;
        let mut world = scenario::build_world(&cfg.scenario, cfg.horizon_s)?;
        let dt = cfg.scenario.dt();
        let agent_ids = world.agent_ids();
        bank.ensure_agents(&agent_ids, self.embedder)?;
        let mut agents: Vec<DrivingAgent> = agent_ids
            .iter()
            .map(|&id| DrivingAgent::new(id, cfg.scenario.kind))
            .collect();

        let header = LogHeader {
            format_version: LOG_FORMAT_VERSION,
            episode_id: episode_id.to_string(),
            scenario: cfg.scenario.clone(),
            horizon_s: cfg.horizon_s,
            dt,
            memory_mode: cfg.memory_mode,
            retrieval_k: cfg.retrieval_k,
            sequential_stepping: cfg.sequential_stepping,
            backend_id: self.chat.id(),
            embedder_id: self.embedder.id(),
            prompt_ids: prompts::ALL.iter().map(|t| t.id.to_string()).collect(),
            agent_ids: agent_ids.clone(),
        };

        let mut decisions: Vec<DecisionEntry> = Vec::new();
        let mut steps: Vec<StepEntry> = Vec::new();
        let mut records: BTreeMap<VehicleId, Vec<DecisionRecord>> =
            agent_ids.iter().map(|&id| (id, Vec::new())).collect();
        let mut infra: Option<String> = None;

        // Build the log entry and the memory-facing record for one scored
        // decision. The record's frame is the agent's decision index so
        // reflection flags (indices into the score list) line up with it;
        // in the default stepping mode it equals the world frame.
        let commit = |frame: u32,
                          agent_id: VehicleId,
                          staged: Staged,
                          decided: AgentDecision,
                          score: ScorePair,
                          records: &mut BTreeMap<VehicleId, Vec<DecisionRecord>>,
                          decisions: &mut Vec<DecisionEntry>| {
            let agent_records = records.get_mut(&agent_id).expect("known agent");
            agent_records.push(DecisionRecord {
                agent_id,
                frame: agent_records.len() as u32,
                scene_text: staged.scene.text.clone(),
                planning_process: planning_process_text(&decided),
                decision: FinalDecision {
                    action: decided.action.action,
                    justification: decided.action.justification.clone(),
                },
                score,
            });
            decisions.push(DecisionEntry {
                frame,
                agent_id,
                scene_text: staged.scene.text,
                goal: decided.goal,
                retrieved: staged.retrieved,
                intentions: decided.intentions,
                plan: decided.plan,
                plan_source: decided.plan_source,
                action: decided.action.action,
                justification: decided.action.justification,
                degraded: decided.degraded,
                diagnostics: decided.diagnostics,
                score,
            });
        };

        'run: while !world.done() {
            if cfg.sequential_stepping {
                // Literal per-agent stepping: each agent reasons against the
                // world as the previous agent's step left it, then the world
                // advances with everyone else idling.
                for agent in agents.iter_mut() {
                    if world.done() {
                        break;
                    }
                    let frame = world.frame;
                    let staged = match self.stage(agent, &world, cfg, bank).await {
                        Ok(s) => s,
                        Err(e) => {
                            infra = Some(e.to_string());
                            break 'run;
                        }
                    };
                    let decided =
                        match agent.reason(&staged.scene, &staged.few_shot, self.chat).await {
                            Ok(d) => d,
                            Err(e) => {
                                infra = Some(e.to_string());
                                break 'run;
                            }
                        };
                    let mut actions: BTreeMap<VehicleId, MetaAction> =
                        agent_ids.iter().map(|&a| (a, MetaAction::Idle)).collect();
                    actions.insert(agent.id, decided.action.action);
                    let res = world.step(&actions, dt)?;
                    steps.push(StepEntry {
                        frame,
                        sim_time: res.sim_time,
                        events: res.events,
                        collisions: res.collisions,
                    });
                    let score = score_step(&world, agent.id);
                    commit(frame, agent.id, staged, decided, score, &mut records, &mut decisions);
                }
            } else {
                let frame = world.frame;
                let mut staged_all: Vec<Staged> = Vec::with_capacity(agents.len());
                for agent in agents.iter_mut() {
                    match self.stage(agent, &world, cfg, bank).await {
                        Ok(s) => staged_all.push(s),
                        Err(e) => {
                            infra = Some(e.to_string());
                            break 'run;
                        }
                    }
                }
                let mut decided_all: Vec<AgentDecision> = Vec::with_capacity(agents.len());
                if cfg.concurrent_agents {
                    let chat = self.chat;
                    let futs = agents.iter_mut().zip(staged_all.iter()).map(|(agent, st)| {
                        async move { agent.reason(&st.scene, &st.few_shot, chat).await }
                    });
                    for res in futures::future::join_all(futs).await {
                        match res {
                            Ok(d) => decided_all.push(d),
                            Err(e) => {
                                infra = Some(e.to_string());
                                break 'run;
                            }
                        }
                    }
                } else {
                    for (agent, st) in agents.iter_mut().zip(staged_all.iter()) {
                        match agent.reason(&st.scene, &st.few_shot, self.chat).await {
                            Ok(d) => decided_all.push(d),
                            Err(e) => {
                                infra = Some(e.to_string());
                                break 'run;
                            }
                        }
                    }
                }
                let actions: BTreeMap<VehicleId, MetaAction> = agents
                    .iter()
                    .zip(&decided_all)
                    .map(|(a, d)| (a.id, d.action.action))
                    .collect();
                let res = world.step(&actions, dt)?;
                steps.push(StepEntry {
                    frame,
                    sim_time: res.sim_time,
                    events: res.events,
                    collisions: res.collisions,
                });
                for ((agent, staged), decided) in
                    agents.iter().zip(staged_all).zip(decided_all)
                {
                    let score = score_step(&world, agent.id);
                    commit(frame, agent.id, staged, decided, score, &mut records, &mut decisions);
                }
            }
        }

        let (outcome, detail) = match &infra {
            Some(msg) => (
                EpisodeOutcome::InfrastructureFailure,
                format!("episode aborted: {msg}"),
            ),
            None => match judge_outcome(&world, &cfg.scenario) {
                Outcome::Success => {
                    (EpisodeOutcome::Success, "all agents reached their goals".to_string())
                }
                Outcome::CollisionFailure => {
                    let pairs: Vec<String> =
                        world.collided.iter().map(|id| id.to_string()).collect();
                    (
                        EpisodeOutcome::CollisionFailure,
                        format!("collision involving {}", pairs.join(", ")),
                    )
                }
                Outcome::TimeoutFailure | Outcome::Ongoing => (
                    EpisodeOutcome::TimeoutFailure,
                    "horizon reached before all goals were met".to_string(),
                ),
            },
        };

        let mut reflection = None;
        if reflect && infra.is_none() {
            let mut all_flags = Vec::new();
            let mut corrections = Vec::new();
            let mut skipped = 0usize;
            for id in &agent_ids {
                let recs = &records[id];
                if recs.is_empty() {
                    continue;
                }
                let scores: Vec<ScorePair> = recs.iter().map(|r| r.score).collect();
                let collided = world.collided.contains(id);
                let flags = flag_decisions(*id, &scores, collided, &cfg.thresholds);
                let mut seen = BTreeSet::new();
                for flag in &flags {
                    if !seen.insert(flag.frame) {
                        continue;
                    }
                    let (fixed, _diags) = correct(&recs[flag.frame], flag.reason, self.chat).await;
                    match fixed {
                        Some(c) => corrections.push(c),
                        None => skipped += 1,
                    }
                }
                all_flags.extend(flags);
            }
            let flat: Vec<DecisionRecord> =
                agent_ids.iter().flat_map(|id| records[id].iter().cloned()).collect();
            let retention = bank
                .apply_reflection(
                    episode_id,
                    &flat,
                    &all_flags,
                    &corrections,
                    &cfg.thresholds,
                    self.embedder,
                )
                .await?;
            reflection = Some(ReflectionEntry {
                flags: all_flags,
                corrections,
                skipped_corrections: skipped,
                retention,
            });
        }

        Ok(EpisodeLog {
            header,
            decisions,
            steps,
            outcome: OutcomeEntry {
                outcome,
                frames: world.frame,
                sim_time: world.sim_time,
                detail,
            },
            reflection,
        })
    }

    /// Run a training batch: episode i uses scenario seed `base_seed + i`,
    /// reflection is on, and memory is persisted after every episode.
    /// Episodes that die on infrastructure are recorded and skipped over.
    pub async fn train(
        &self,
        cfg: &EpisodeConfig,
        episodes: usize,
        base_seed: u64,
        bank: &mut MemoryBank,
        log_dir: Option<&Path>,
    ) -> Result<RunSummary, HarnessError> {
        if episodes == 0 {
            return Err(HarnessError::Config("episodes must be at least 1".into()));
        }
        let mut rows = Vec::with_capacity(episodes);
        for i in 0..episodes {
            let mut ecfg = cfg.clone();
            ecfg.scenario.seed = base_seed.wrapping_add(i as u64);
            let id = train_episode_id(ecfg.scenario.kind, ecfg.scenario.seed, i);
            let log = self.run_episode(&ecfg, &id, bank, true).await?;
            bank.save()?;
            if let Some(dir) = log_dir {
                log.write_to(&dir.join(format!("{id}.jsonl")))?;
            }
            rows.push(EpisodeRow::from_log(i, ecfg.scenario.seed, &log, bank.total_len()));
        }
        Ok(RunSummary::from_rows(rows))
    }

    /// Run a frozen evaluation batch: exactly [`TEST_EPISODES`] scenarios
    /// whose seeds derive from `batch_seed`, with reflection and memory
    /// updates disabled so the memory files stay byte-identical.
    pub async fn test(
        &self,
        cfg: &EpisodeConfig,
        batch_seed: u64,
        bank: &mut MemoryBank,
        log_dir: Option<&Path>,
    ) -> Result<RunSummary, HarnessError> {
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let mut rows = Vec::with_capacity(TEST_EPISODES);
        for i in 0..TEST_EPISODES {
            let seed: u64 = rng.random();
            let mut ecfg = cfg.clone();
            ecfg.scenario.seed = seed;
            let id = test_episode_id(ecfg.scenario.kind, batch_seed, i);
            let log = self.run_episode(&ecfg, &id, bank, false).await?;
            if let Some(dir) = log_dir {
                log.write_to(&dir.join(format!("{id}.jsonl")))?;
            }
            rows.push(EpisodeRow::from_log(i, seed, &log, bank.total_len()));
        }
        Ok(RunSummary::from_rows(rows))
    }
}
