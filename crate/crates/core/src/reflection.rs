//! Scoring and ranking-based reflection.
//!
//! After every step each agent's decision gets a safety score (from
//! time-to-collision) and an efficiency score (speed relative to nearby
//! traffic). At episode end the score trajectory is scanned for faulty
//! decisions — extremely low scores, sudden drops, and, after a collision,
//! the chain of decisions that led into it — which are then corrected via
//! the language backend. Only good experiences survive into memory:
//! high-scoring unflagged decisions and explicitly corrected ones.

use serde::{Deserialize, Serialize};

use crate::jsonx;
use crate::llm::{ChatBackend, ChatMessage};
use crate::memory::{ExperienceRecord, FinalDecision, MemoryError, MemoryStore, RecordId};
use crate::prompts;
use crate::sim::{compute_ttc, MetaAction, Ttc, VehicleId, World};

/// Bumper-gap radius within which traffic counts toward the average speed.
pub const AVERAGE_SPEED_RANGE_M: f64 = 100.0;
/// Below this average speed the efficiency denominator is meaningless.
pub const STANDSTILL_SPEED: f64 = 0.1;
/// Parse retries for a correction exchange.
pub const CORRECT_PARSE_RETRIES: usize = 2;

/// Tunable reflection thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReflectionThresholds {
    /// Combined score below this flags a frame outright.
    pub extreme_low: f64,
    /// Combined-score drop between consecutive frames that flags the later
    /// frame.
    pub sudden_drop: f64,
    /// Minimum combined score for an unflagged decision to be retained.
    pub retention: f64,
}

impl Default for ReflectionThresholds {
    fn default() -> Self {
        ReflectionThresholds { extreme_low: 2.5, sudden_drop: 5.0, retention: 8.0 }
    }
}

/// Safety, efficiency, and their combination for one decision frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub safety: f64,
    pub efficiency: f64,
    pub combined: f64,
}

impl ScorePair {
    pub fn new(safety: f64, efficiency: f64) -> ScorePair {
        debug_assert!((0.0..=10.0).contains(&safety), "safety {safety} out of range");
        debug_assert!((0.0..=10.0).contains(&efficiency), "efficiency {efficiency} out of range");
        ScorePair { safety, efficiency, combined: (safety + efficiency) / 2.0 }
    }
}

/// Safety from time-to-collision: 10 above 3 s, 0 at or below 1.5 s,
/// linear in between (continuous at 3 s).
pub fn safety_score(ttc: Ttc) -> f64 {
    let t = ttc.seconds();
    if t > 3.0 {
        10.0
    } else if t <= 1.5 {
        0.0
    } else {
        20.0 * (t - 1.5) / 3.0
    }
}

/// Efficiency as the ratio of the agent's speed to the surrounding average,
/// scaled to 10 and capped there. A (near-)standstill average means there
/// is no meaningful traffic pace to compare against.
pub fn efficiency_score(v_llm: f64, v_avg: f64) -> f64 {
    if v_avg <= STANDSTILL_SPEED || v_llm >= v_avg {
        10.0
    } else {
        10.0 * v_llm / v_avg
    }
}

/// Mean speed of vehicles within [`AVERAGE_SPEED_RANGE_M`] of the ego
/// (bumper gap, any lane, same frame), ego excluded. 0.0 when alone.
pub fn average_speed(world: &World, ego_id: VehicleId) -> f64 {
    let Ok(ego) = world.vehicle(ego_id) else { return 0.0 };
    let ego_seg = world.road.seg(&ego.segment);
    let ego_x = ego_seg.frame_pos(ego.s);
    let period = world.road.frame_period(ego_seg.frame);
    let mut sum = 0.0;
    let mut n = 0usize;
    for other in world.vehicles.values() {
        if other.id == ego_id {
            continue;
        }
        let seg = world.road.seg(&other.segment);
        if seg.frame != ego_seg.frame {
            continue;
        }
        let delta = world.road.frame_delta(period, ego_x, seg.frame_pos(other.s)).abs();
        let half = (ego.length + other.length) / 2.0;
        let gap = (delta - half).max(0.0);
        if gap <= AVERAGE_SPEED_RANGE_M {
            sum += other.v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Score one agent's situation in the world as it stands after a step.
/// A collision forces the safety component to zero for that frame.
pub fn score_step(world: &World, ego_id: VehicleId) -> ScorePair {
    let safety = if world.collided.contains(&ego_id) {
        0.0
    } else {
        safety_score(compute_ttc(world, ego_id).unwrap_or(Ttc::INFINITE))
    };
    let v_ego = world.vehicle(ego_id).map(|v| v.v).unwrap_or(0.0);
    let efficiency = efficiency_score(v_ego, average_speed(world, ego_id));
    ScorePair::new(safety, efficiency)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    /// Part of the decision chain that ended in a collision.
    CollisionTerminal,
    /// Combined score below the extreme-low threshold.
    ExtremeLow,
    /// Combined score fell sharply from the previous frame.
    SuddenDrop,
}

impl FlagReason {
    pub fn name(&self) -> &'static str {
        match self {
            FlagReason::CollisionTerminal => "collision_terminal",
            FlagReason::ExtremeLow => "extreme_low",
            FlagReason::SuddenDrop => "sudden_drop",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionFlag {
    pub frame: usize,
    pub reason: FlagReason,
    pub agent_id: VehicleId,
}

/// Scan one agent's per-frame combined scores for faulty decisions.
///
/// Flags: every frame under the extreme-low threshold; every frame whose
/// combined score dropped from its predecessor by at least the sudden-drop
/// threshold; and, when the episode ended in a collision, the last frame
/// plus the earliest frame (at least 1) of the final monotone
/// non-increasing run — the decision that started the slide.
pub fn flag_decisions(
    agent_id: VehicleId,
    scores: &[ScorePair],
    collided: bool,
    thresholds: &ReflectionThresholds,
) -> Vec<ReflectionFlag> {
    let mut flags: Vec<(usize, FlagReason)> = Vec::new();
    for (i, s) in scores.iter().enumerate() {
        if s.combined < thresholds.extreme_low {
            flags.push((i, FlagReason::ExtremeLow));
        }
    }
    for i in 1..scores.len() {
        if scores[i - 1].combined - scores[i].combined >= thresholds.sudden_drop {
            flags.push((i, FlagReason::SuddenDrop));
        }
    }
    if collided && !scores.is_empty() {
        let last = scores.len() - 1;
        flags.push((last, FlagReason::CollisionTerminal));
        if last >= 1 {
            let mut start = last;
            while start >= 1 && scores[start].combined <= scores[start - 1].combined {
                start -= 1;
            }
            flags.push((start.max(1), FlagReason::CollisionTerminal));
        }
    }
    flags.sort_unstable();
    flags.dedup();
    flags
        .into_iter()
        .map(|(frame, reason)| ReflectionFlag { frame, reason, agent_id })
        .collect()
}

/// What the retention pass did, for the audit trail.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RetentionReport {
    pub retained_unflagged: usize,
    pub retained_corrected: usize,
    pub discarded: usize,
    pub inserted_ids: Vec<RecordId>,
}

/// Everything reflection needs to know about one decision that was taken.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub agent_id: VehicleId,
    pub frame: u32,
    pub scene_text: String,
    pub planning_process: String,
    pub decision: FinalDecision,
    pub score: ScorePair,
}

/// A flagged decision re-judged by the language backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectedDecision {
    pub agent_id: VehicleId,
    pub frame: u32,
    pub corrected_action: MetaAction,
    pub corrected_reasoning: String,
}

#[derive(Deserialize)]
struct RawCorrection {
    corrected_action: String,
    #[serde(default)]
    explanation: String,
}

/// Ask the backend what should have been done instead. Parse failure after
/// [`CORRECT_PARSE_RETRIES`] retries or any backend failure skips the
/// record (returns None plus diagnostics); nothing is inserted for it.
pub async fn correct(
    record: &DecisionRecord,
    reason: FlagReason,
    llm: &dyn ChatBackend,
) -> (Option<CorrectedDecision>, Vec<String>) {
    let prompt = prompts::render(
        &prompts::REFLECT,
        &[
            ("reason", reason.name()),
            ("scene", record.scene_text.as_str()),
            ("planning", record.planning_process.as_str()),
            (
                "decision",
                &format!(
                    "{} ({})",
                    record.decision.action.name(),
                    if record.decision.justification.is_empty() {
                        "no justification recorded"
                    } else {
                        &record.decision.justification
                    }
                ),
            ),
            ("safety", &format!("{:.1}", record.score.safety)),
            ("efficiency", &format!("{:.1}", record.score.efficiency)),
        ],
    )
    .expect("reflect template placeholders");
    let messages = vec![ChatMessage::system(prompts::SYSTEM.text), ChatMessage::user(prompt)];

    let mut diagnostics = Vec::new();
    for attempt in 0..=CORRECT_PARSE_RETRIES {
        let raw = match llm.chat(&messages).await {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(format!(
                    "backend failure, skipping correction of agent {} frame {}: {e}",
                    record.agent_id, record.frame
                ));
                return (None, diagnostics);
            }
        };
        if let Some(parsed) = jsonx::first_json_object::<RawCorrection>(&raw) {
            if let Some(action) = MetaAction::parse_loose(&parsed.corrected_action) {
                return (
                    Some(CorrectedDecision {
                        agent_id: record.agent_id,
                        frame: record.frame,
                        corrected_action: action,
                        corrected_reasoning: parsed.explanation,
                    }),
                    diagnostics,
                );
            }
        }
        diagnostics.push(format!("attempt {}: no parseable correction", attempt + 1));
    }
    diagnostics.push(format!(
        "skipping correction of agent {} frame {} after retries",
        record.agent_id, record.frame
    ));
    (None, diagnostics)
}

/// Apply the retention policy at episode end: keep unflagged decisions with
/// a combined score at or above the retention threshold, and every
/// corrected decision (rebuilt around the corrected action/reasoning but
/// keeping the original scores). Flagged-and-uncorrected records are
/// dropped. Embeds each retained record's scene text as its key.
pub async fn update_memory(
    store: &mut MemoryStore,
    episode_id: &str,
    decisions: &[DecisionRecord],
    flags: &[ReflectionFlag],
    corrections: &[CorrectedDecision],
    thresholds: &ReflectionThresholds,
    embedder: &dyn crate::llm::Embedder,
) -> Result<RetentionReport, MemoryError> {
    let flagged: std::collections::BTreeSet<(VehicleId, u32)> =
        flags.iter().map(|f| (f.agent_id, f.frame as u32)).collect();
    let mut report = RetentionReport::default();

    for d in decisions {
        if flagged.contains(&(d.agent_id, d.frame)) {
            continue; // either corrected below or dropped
        }
        if d.score.combined < thresholds.retention {
            report.discarded += 1;
            continue;
        }
        let embedding = crate::memory::embed(&d.scene_text, embedder).await?;
        let id = store.next_record_id();
        store.insert(ExperienceRecord {
            record_id: id,
            agent_id: d.agent_id,
            episode_id: episode_id.to_string(),
            frame: d.frame,
            scenario_description: d.scene_text.clone(),
            planning_process: d.planning_process.clone(),
            final_decision: d.decision.clone(),
            evaluation_score: d.score,
            corrected: false,
            embedding,
        })?;
        report.retained_unflagged += 1;
        report.inserted_ids.push(id);
    }

    for c in corrections {
        let Some(original) = decisions
            .iter()
            .find(|d| d.agent_id == c.agent_id && d.frame == c.frame)
        else {
            report.discarded += 1;
            continue;
        };
        let embedding = crate::memory::embed(&original.scene_text, embedder).await?;
        let id = store.next_record_id();
        store.insert(ExperienceRecord {
            record_id: id,
            agent_id: c.agent_id,
            episode_id: episode_id.to_string(),
            frame: c.frame,
            scenario_description: original.scene_text.clone(),
            planning_process: original.planning_process.clone(),
            final_decision: FinalDecision {
                action: c.corrected_action,
                justification: c.corrected_reasoning.clone(),
            },
            evaluation_score: original.score,
            corrected: true,
            embedding,
        })?;
        report.retained_corrected += 1;
        report.inserted_ids.push(id);
    }

    // Flagged records without a correction were dropped silently above;
    // count them for the audit trail.
    let corrected: std::collections::BTreeSet<(VehicleId, u32)> =
        corrections.iter().map(|c| (c.agent_id, c.frame)).collect();
    report.discarded += decisions
        .iter()
        .filter(|d| {
            flagged.contains(&(d.agent_id, d.frame)) && !corrected.contains(&(d.agent_id, d.frame))
        })
        .count();

    Ok(report)
}
