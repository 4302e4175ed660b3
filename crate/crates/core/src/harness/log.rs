//! Episode logs.
//!
//! A log is a JSON-lines file with one typed record per line: a header,
//! then per decision frame the agents' decision entries followed by one
//! step entry, then an outcome entry and (when reflection ran) a
//! reflection entry. Serialization is byte-deterministic for a given
//! episode — logs contain no timestamps, hostnames, or random ids — so
//! identical runs produce identical files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::PlanSource;
use crate::interaction::IntentionEstimate;
use crate::memory::RecordId;
use crate::planning::{Goal, Plan};
use crate::reflection::{CorrectedDecision, ReflectionFlag, RetentionReport, ScorePair};
use crate::scenario::ScenarioConfig;
use crate::sim::{MetaAction, SimEvent, VehicleId};

use super::{HarnessError, MemoryMode};

pub const LOG_FORMAT_VERSION: u32 = 1;

/// Terminal classification of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Success,
    CollisionFailure,
    TimeoutFailure,
    /// The episode was aborted because a backend hard-failed mid-run; it
    /// carries no driving verdict and is excluded from success rates.
    InfrastructureFailure,
}

impl EpisodeOutcome {
    pub fn name(self) -> &'static str {
        match self {
            EpisodeOutcome::Success => "success",
            EpisodeOutcome::CollisionFailure => "collision_failure",
            EpisodeOutcome::TimeoutFailure => "timeout_failure",
            EpisodeOutcome::InfrastructureFailure => "infrastructure_failure",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format_version: u32,
    pub episode_id: String,
    pub scenario: ScenarioConfig,
    pub horizon_s: f64,
    pub dt: f64,
    pub memory_mode: MemoryMode,
    pub retrieval_k: usize,
    pub sequential_stepping: bool,
    pub backend_id: String,
    pub embedder_id: String,
    pub prompt_ids: Vec<String>,
    pub agent_ids: Vec<VehicleId>,
}

/// A memory record consulted while reasoning, by id and cosine similarity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub record_id: RecordId,
    pub similarity: f64,
}

/// One agent's decision at one frame, with the score measured after the
/// world step that applied it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub frame: u32,
    pub agent_id: VehicleId,
    pub scene_text: String,
    pub goal: Goal,
    pub retrieved: Vec<RetrievedRef>,
    pub intentions: Vec<IntentionEstimate>,
    pub plan: Plan,
    pub plan_source: PlanSource,
    pub action: MetaAction,
    pub justification: String,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
    pub score: ScorePair,
}

/// The world-step boundary that executed a frame's actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    /// Frame index that was executed (the world's frame counter before the
    /// step).
    pub frame: u32,
    pub sim_time: f64,
    pub events: Vec<SimEvent>,
    pub collisions: Vec<(VehicleId, VehicleId)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeEntry {
    pub outcome: EpisodeOutcome,
    /// Number of executed decision frames.
    pub frames: u32,
    pub sim_time: f64,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEntry {
    pub flags: Vec<ReflectionFlag>,
    pub corrections: Vec<CorrectedDecision>,
    /// Flags for which correction was attempted but skipped (unparseable or
    /// backend-failed).
    pub skipped_corrections: usize,
    pub retention: RetentionReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Decision(DecisionEntry),
    Step(StepEntry),
    Outcome(OutcomeEntry),
    Reflection(ReflectionEntry),
}

/// Full in-memory episode log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub header: LogHeader,
    pub decisions: Vec<DecisionEntry>,
    pub steps: Vec<StepEntry>,
    pub outcome: OutcomeEntry,
    pub reflection: Option<ReflectionEntry>,
}

impl EpisodeLog {
    /// Serialize in canonical line order: header, then decisions and steps
    /// interleaved by frame (decisions of frame f, then the step that
    /// executed f), then outcome, then reflection.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |line: LogLine| {
            out.push_str(&serde_json::to_string(&line).expect("log lines serialize"));
            out.push('\n');
        };
        push(LogLine::Header(self.header.clone()));
        let mut di = self.decisions.iter().peekable();
        for step in &self.steps {
            while let Some(d) = di.peek() {
                if d.frame == step.frame {
                    push(LogLine::Decision(di.next().unwrap().clone()));
                } else {
                    break;
                }
            }
            push(LogLine::Step(step.clone()));
        }
        for d in di {
            push(LogLine::Decision(d.clone()));
        }
        push(LogLine::Outcome(self.outcome.clone()));
        if let Some(r) = &self.reflection {
            push(LogLine::Reflection(r.clone()));
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<(), HarnessError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    pub fn parse(text: &str) -> Result<EpisodeLog, HarnessError> {
        let mut header = None;
        let mut decisions = Vec::new();
        let mut steps = Vec::new();
        let mut outcome = None;
        let mut reflection = None;
        for (i, raw) in text.lines().enumerate() {
            if raw.trim().is_empty() {
                continue;
            }
            let line: LogLine = serde_json::from_str(raw).map_err(|e| {
                HarnessError::LogFormat(format!("line {}: {e}", i + 1))
            })?;
            match line {
                LogLine::Header(h) => {
                    if h.format_version != LOG_FORMAT_VERSION {
                        return Err(HarnessError::LogFormat(format!(
                            "unsupported log format version {}",
                            h.format_version
                        )));
                    }
                    if header.replace(h).is_some() {
                        return Err(HarnessError::LogFormat("duplicate header".into()));
                    }
                }
                LogLine::Decision(d) => decisions.push(d),
                LogLine::Step(s) => steps.push(s),
                LogLine::Outcome(o) => {
                    if outcome.replace(o).is_some() {
                        return Err(HarnessError::LogFormat("duplicate outcome".into()));
                    }
                }
                LogLine::Reflection(r) => {
                    if reflection.replace(r).is_some() {
                        return Err(HarnessError::LogFormat("duplicate reflection".into()));
                    }
                }
            }
        }
        let header = header.ok_or_else(|| HarnessError::LogFormat("missing header".into()))?;
        let outcome = outcome.ok_or_else(|| HarnessError::LogFormat("missing outcome".into()))?;
        Ok(EpisodeLog { header, decisions, steps, outcome, reflection })
    }

    pub fn read_from(path: &Path) -> Result<EpisodeLog, HarnessError> {
        EpisodeLog::parse(&fs::read_to_string(path)?)
    }

    /// Actions recorded for one executed frame, keyed by agent.
    pub fn actions_at(&self, frame: u32) -> std::collections::BTreeMap<VehicleId, MetaAction> {
        self.decisions
            .iter()
            .filter(|d| d.frame == frame)
            .map(|d| (d.agent_id, d.action))
            .collect()
    }

    /// Score sequence of one agent in decision order.
    pub fn scores_for(&self, agent: VehicleId) -> Vec<ScorePair> {
        self.decisions.iter().filter(|d| d.agent_id == agent).map(|d| d.score).collect()
    }

    /// Mean combined score over every decision in the log, or `None` when
    /// there are no decisions.
    pub fn mean_scores(&self) -> Option<ScorePair> {
        if self.decisions.is_empty() {
            return None;
        }
        let n = self.decisions.len() as f64;
        let (s, e) = self
            .decisions
            .iter()
            .fold((0.0, 0.0), |(s, e), d| (s + d.score.safety, e + d.score.efficiency));
        Some(ScorePair::new(s / n, e / n))
    }
}
