//! Goal derivation, plan management, and action selection.
//!
//! The reasoning chain per decision: a deterministic goal from the scene,
//! then either a fresh plan (brainstorm + score + rank + select in one
//! structured exchange) or a feasibility check of the active plan, then a
//! single meta-action. Parsers are tolerant of prose but enforce score
//! ranges and the closed action set; persistent parse failures degrade to
//! conservative defaults (keep the plan, Idle) so an episode never dies on
//! a malformed reply. Backend transport failures in plan generation and
//! action selection do propagate — without a working backend there is no
//! agent to speak of.

use serde::{Deserialize, Serialize};

use crate::interaction::{intentions_text, IntentionEstimate};
use crate::jsonx;
use crate::llm::{ChatBackend, ChatMessage, LlmError};
use crate::perception::SceneDescription;
use crate::prompts;
use crate::scenario::ScenarioKind;
use crate::sim::MetaAction;

/// Parse retries for plan generation and action selection.
pub const PLAN_PARSE_RETRIES: usize = 2;
/// Parse retries for the keep/replan check.
pub const CHECK_PARSE_RETRIES: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalKind {
    /// Scenario-critical objective with a spatial constraint (merge before
    /// the ramp ends; leave via the planned exit).
    Special,
    /// Ordinary driving: safe and efficient progress.
    General,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    pub kind: GoalKind,
    pub description: String,
    /// Rough time budget to satisfy a special goal, s.
    pub deadline_hint: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanCandidate {
    pub id: u32,
    pub description: String,
    pub pros: String,
    pub cons: String,
    pub difficulty: String,
    /// Self-assessed safety, clamped to [0, 10].
    pub safety_score: f64,
    /// Self-assessed efficiency, clamped to [0, 10].
    pub efficiency_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlanStatus {
    Active,
    Invalidated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub chosen: PlanCandidate,
    /// Decision index at which the plan was adopted.
    pub created_frame: u32,
    pub status: PlanStatus,
}

impl Plan {
    /// Conservative stand-in used when plan generation cannot produce a
    /// parseable result.
    pub fn fallback(created_frame: u32) -> Plan {
        Plan {
            chosen: PlanCandidate {
                id: 0,
                description: "follow current lane, match traffic speed".into(),
                pros: "simple and predictable".into(),
                cons: "makes no progress toward special goals".into(),
                difficulty: "low".into(),
                safety_score: 5.0,
                efficiency_score: 5.0,
            },
            created_frame,
            status: PlanStatus::Active,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionDecision {
    pub action: MetaAction,
    pub justification: String,
}

/// Plan plus how it was obtained.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanOutcome {
    pub plan: Plan,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckVerdict {
    Keep,
    Replan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub verdict: CheckVerdict,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionOutcome {
    pub decision: ActionDecision,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

fn fmt1(x: f64) -> String {
    format!("{:.1}", (x * 10.0).round() / 10.0)
}

/// Deterministic goal from the scene: agents that still have to merge or
/// exit get a special goal with a time budget (remaining distance over
/// current speed); everyone else drives for safe, efficient progress.
pub fn derive_goal(scene: &SceneDescription, kind: ScenarioKind) -> Goal {
    let special = match kind {
        ScenarioKind::RampMerge => scene
            .ego
            .remaining_ramp_distance
            .map(|d| (d, "merge left onto the main road before the ramp ends")),
        ScenarioKind::Roundabout => scene
            .ego
            .remaining_to_exit
            .map(|d| (d, "leave the roundabout via the planned exit")),
    };
    match special {
        Some((distance, objective)) => {
            let deadline = if distance <= 0.0 {
                Some(0.0)
            } else if scene.ego.v > 0.1 {
                Some(distance / scene.ego.v)
            } else {
                None
            };
            let description = match deadline {
                Some(t) => format!(
                    "{objective} ({} m remaining, about {} s at current speed)",
                    fmt1(distance),
                    fmt1(t)
                ),
                None => format!("{objective} ({} m remaining)", fmt1(distance)),
            };
            Goal { kind: GoalKind::Special, description, deadline_hint: deadline }
        }
        None => Goal {
            kind: GoalKind::General,
            description: "maintaining safe and efficient driving".into(),
            deadline_hint: None,
        },
    }
}

#[derive(Deserialize)]
struct RawCandidate {
    id: u64,
    description: String,
    #[serde(default)]
    pros: String,
    #[serde(default)]
    cons: String,
    #[serde(default)]
    difficulty: String,
    safety: f64,
    efficiency: f64,
}

#[derive(Deserialize)]
struct RawPlanResponse {
    plans: Vec<RawCandidate>,
    #[serde(default)]
    ranking: Vec<u64>,
    selected: u64,
}

/// Validate a raw plan response; returns the chosen plan or a description
/// of what was wrong (which triggers a retry).
fn validate_plan_response(
    raw: RawPlanResponse,
    created_frame: u32,
    diagnostics: &mut Vec<String>,
) -> Result<Plan, String> {
    if raw.plans.is_empty() {
        return Err("response contained no plan candidates".into());
    }
    let ids: Vec<u64> = raw.plans.iter().map(|p| p.id).collect();
    if !ids.contains(&raw.selected) {
        return Err(format!("selected id {} not among candidates {ids:?}", raw.selected));
    }
    for r in &raw.ranking {
        if !ids.contains(r) {
            diagnostics.push(format!("ranking references unknown candidate {r}"));
        }
    }
    let raw_chosen = raw.plans.into_iter().find(|p| p.id == raw.selected).unwrap();
    let mut clamp = |label: &str, value: f64| -> f64 {
        if (0.0..=10.0).contains(&value) {
            value
        } else {
            let clamped = value.clamp(0.0, 10.0);
            diagnostics.push(format!(
                "candidate {} {label} score {value} out of range, clamped to {clamped}",
                raw.selected
            ));
            clamped
        }
    };
    let safety_score = clamp("safety", raw_chosen.safety);
    let efficiency_score = clamp("efficiency", raw_chosen.efficiency);
    Ok(Plan {
        chosen: PlanCandidate {
            id: raw_chosen.id as u32,
            description: raw_chosen.description,
            pros: raw_chosen.pros,
            cons: raw_chosen.cons,
            difficulty: raw_chosen.difficulty,
            safety_score,
            efficiency_score,
        },
        created_frame,
        status: PlanStatus::Active,
    })
}

/// One structured exchange: brainstorm candidates with pros/cons/difficulty
/// and 0–10 safety/efficiency scores, rank them, select one. Unparseable
/// after [`PLAN_PARSE_RETRIES`] retries falls back to a lane-keeping plan
/// (degraded); backend transport failure propagates.
pub async fn generate_and_select_plan(
    scene: &SceneDescription,
    goal: &Goal,
    intentions: &[IntentionEstimate],
    few_shot: &str,
    llm: &dyn ChatBackend,
) -> Result<PlanOutcome, LlmError> {
    let prompt = prompts::render(
        &prompts::PLAN,
        &[
            ("scene", scene.text.as_str()),
            ("goal", goal.description.as_str()),
            ("intentions", &intentions_text(intentions)),
            ("few_shot", few_shot),
        ],
    )
    .expect("plan template placeholders");
    let messages = vec![ChatMessage::system(prompts::SYSTEM.text), ChatMessage::user(prompt)];

    let mut diagnostics = Vec::new();
    for _ in 0..=PLAN_PARSE_RETRIES {
        let raw = llm.chat(&messages).await?;
        match jsonx::first_json_object::<RawPlanResponse>(&raw) {
            Some(parsed) => match validate_plan_response(parsed, scene.frame, &mut diagnostics) {
                Ok(plan) => return Ok(PlanOutcome { plan, degraded: false, diagnostics }),
                Err(why) => diagnostics.push(why),
            },
            None => diagnostics.push("no parseable plan object in response".into()),
        }
    }
    diagnostics.push("falling back to lane-keeping plan".into());
    Ok(PlanOutcome { plan: Plan::fallback(scene.frame), degraded: true, diagnostics })
}

fn parse_check(raw: &str) -> Option<CheckVerdict> {
    for token in raw
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
    {
        match token.to_ascii_lowercase().as_str() {
            "keep" => return Some(CheckVerdict::Keep),
            "replan" => return Some(CheckVerdict::Replan),
            _ => {}
        }
    }
    None
}

/// Ask whether the active plan is still feasible. A replan verdict marks
/// the plan invalidated. Unparseable answers (after [`CHECK_PARSE_RETRIES`]
/// retries) and backend failures both conservatively keep the plan.
pub async fn check_plan(
    plan: &mut Plan,
    scene: &SceneDescription,
    intentions: &[IntentionEstimate],
    llm: &dyn ChatBackend,
) -> CheckOutcome {
    debug_assert_eq!(plan.status, PlanStatus::Active);
    let prompt = prompts::render(
        &prompts::CHECK,
        &[
            ("scene", scene.text.as_str()),
            ("plan", plan.chosen.description.as_str()),
            ("intentions", &intentions_text(intentions)),
        ],
    )
    .expect("check template placeholders");
    let messages = vec![ChatMessage::system(prompts::SYSTEM.text), ChatMessage::user(prompt)];

    let mut diagnostics = Vec::new();
    for attempt in 0..=CHECK_PARSE_RETRIES {
        let raw = match llm.chat(&messages).await {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(format!("backend failure, keeping plan: {e}"));
                return CheckOutcome { verdict: CheckVerdict::Keep, degraded: true, diagnostics };
            }
        };
        match parse_check(&raw) {
            Some(CheckVerdict::Keep) => {
                return CheckOutcome { verdict: CheckVerdict::Keep, degraded: false, diagnostics }
            }
            Some(CheckVerdict::Replan) => {
                plan.status = PlanStatus::Invalidated;
                return CheckOutcome {
                    verdict: CheckVerdict::Replan,
                    degraded: false,
                    diagnostics,
                };
            }
            None => diagnostics.push(format!(
                "attempt {}: answer gave neither keep nor replan",
                attempt + 1
            )),
        }
    }
    diagnostics.push("defaulting to keep".into());
    CheckOutcome { verdict: CheckVerdict::Keep, degraded: true, diagnostics }
}

#[derive(Deserialize)]
struct RawAction {
    action: String,
    #[serde(default)]
    justification: String,
}

fn parse_action(raw: &str) -> Option<ActionDecision> {
    if let Some(parsed) = jsonx::first_json_object::<RawAction>(raw) {
        if let Some(action) = MetaAction::parse_loose(&parsed.action) {
            return Some(ActionDecision { action, justification: parsed.justification });
        }
    }
    // A bare action word (possibly with trailing punctuation) also counts.
    MetaAction::parse_loose(raw.trim().trim_end_matches(['.', '!']))
        .map(|action| ActionDecision { action, justification: String::new() })
}

/// Pick one of the five meta-actions for the next interval. Unparseable
/// after [`PLAN_PARSE_RETRIES`] retries degrades to Idle; backend transport
/// failure propagates.
pub async fn decide_action(
    scene: &SceneDescription,
    plan: &Plan,
    few_shot: &str,
    llm: &dyn ChatBackend,
) -> Result<ActionOutcome, LlmError> {
    let prompt = prompts::render(
        &prompts::ACTION,
        &[
            ("scene", scene.text.as_str()),
            ("plan", plan.chosen.description.as_str()),
            ("few_shot", few_shot),
        ],
    )
    .expect("action template placeholders");
    let messages = vec![ChatMessage::system(prompts::SYSTEM.text), ChatMessage::user(prompt)];

    let mut diagnostics = Vec::new();
    for attempt in 0..=PLAN_PARSE_RETRIES {
        let raw = llm.chat(&messages).await?;
        match parse_action(&raw) {
            Some(decision) => {
                return Ok(ActionOutcome { decision, degraded: false, diagnostics })
            }
            None => diagnostics.push(format!("attempt {}: no parseable action", attempt + 1)),
        }
    }
    diagnostics.push("defaulting to Idle".into());
    Ok(ActionOutcome {
        decision: ActionDecision { action: MetaAction::Idle, justification: String::new() },
        degraded: true,
        diagnostics,
    })
}
