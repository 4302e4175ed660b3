//! The per-vehicle reasoning pipeline.
//!
//! A driving agent owns the state that persists across decision frames —
//! its neighbor-observation history and its active plan — and runs the
//! reasoning chain for one frame: infer neighbor intentions, then either
//! check the active plan or craft a new one, then pick a meta-action.
//! Degraded sub-results (unparseable but recoverable) are absorbed and
//! reported; backend transport failures during plan generation or action
//! selection propagate so the episode can be aborted as an infrastructure
//! failure.

use serde::{Deserialize, Serialize};

use crate::interaction::{infer_intentions, IntentionEstimate};
use crate::llm::{ChatBackend, LlmError};
use crate::perception::{describe, NeighborObs, SceneDescription, HISTORY_FRAMES};
use crate::planning::{
    check_plan, decide_action, derive_goal, generate_and_select_plan, ActionDecision,
    CheckVerdict, Goal, Plan, PlanStatus,
};
use crate::scenario::ScenarioKind;
use crate::sim::{SimError, VehicleId, World};

/// How the frame's plan came to be.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    /// No active plan existed; one was generated.
    Generated,
    /// The active plan passed its feasibility check.
    Kept,
    /// The check invalidated the plan and a new one was generated.
    Replanned,
}

/// Everything one reasoning cycle produced.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentDecision {
    pub goal: Goal,
    pub intentions: Vec<IntentionEstimate>,
    pub plan: Plan,
    pub plan_source: PlanSource,
    pub action: ActionDecision,
    /// True when any stage fell back to a default (empty intentions,
    /// fallback plan, kept-by-default, or Idle).
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

/// Persistent per-agent state across an episode.
#[derive(Debug)]
pub struct DrivingAgent {
    pub id: VehicleId,
    kind: ScenarioKind,
    history: Vec<Vec<NeighborObs>>,
    plan: Option<Plan>,
}

impl DrivingAgent {
    pub fn new(id: VehicleId, kind: ScenarioKind) -> DrivingAgent {
        DrivingAgent { id, kind, history: Vec::new(), plan: None }
    }

    pub fn active_plan(&self) -> Option<&Plan> {
        self.plan.as_ref()
    }

    /// Take the scene description for this frame and fold its neighbor list
    /// into the rolling history window.
    pub fn observe(&mut self, world: &World) -> Result<SceneDescription, SimError> {
        let scene = describe(world, self.id, &self.history)?;
        self.history.push(scene.neighbors.clone());
        if self.history.len() > HISTORY_FRAMES {
            self.history.remove(0);
        }
        Ok(scene)
    }

    /// Run the goal → plan-or-check → action chain for one frame.
    ///
    /// With a well-formed backend this makes at most three chat calls:
    /// intention inference, one plan operation, one action selection (a
    /// replan verdict adds a regeneration call; parse retries add more).
    pub async fn reason(
        &mut self,
        scene: &SceneDescription,
        few_shot: &str,
        llm: &dyn ChatBackend,
    ) -> Result<AgentDecision, LlmError> {
        let goal = derive_goal(scene, self.kind);
        let inferred = infer_intentions(scene, llm).await;
        let mut degraded = inferred.degraded;
        let mut diagnostics = inferred.diagnostics;
        let intentions = inferred.estimates;

        let (plan, plan_source) = match self.plan.take() {
            Some(mut active) if active.status == PlanStatus::Active => {
                let check = check_plan(&mut active, scene, &intentions, llm).await;
                degraded |= check.degraded;
                diagnostics.extend(check.diagnostics);
                if check.verdict == CheckVerdict::Replan {
                    let out =
                        generate_and_select_plan(scene, &goal, &intentions, few_shot, llm).await?;
                    degraded |= out.degraded;
                    diagnostics.extend(out.diagnostics);
                    (out.plan, PlanSource::Replanned)
                } else {
                    (active, PlanSource::Kept)
                }
            }
            _ => {
                let out =
                    generate_and_select_plan(scene, &goal, &intentions, few_shot, llm).await?;
                degraded |= out.degraded;
                diagnostics.extend(out.diagnostics);
                (out.plan, PlanSource::Generated)
            }
        };

        let act = decide_action(scene, &plan, few_shot, llm).await?;
        degraded |= act.degraded;
        diagnostics.extend(act.diagnostics);
        self.plan = Some(plan.clone());

        Ok(AgentDecision {
            goal,
            intentions,
            plan,
            plan_source,
            action: act.decision,
            degraded,
            diagnostics,
        })
    }
}

/// Canonical one-line rendering of a decision's planning chain, stored in
/// experience records and logs.
pub fn planning_process_text(decision: &AgentDecision) -> String {
    let source = match decision.plan_source {
        PlanSource::Generated => "new plan",
        PlanSource::Kept => "kept plan",
        PlanSource::Replanned => "replanned",
    };
    format!(
        "goal: {} | {}: {} (safety {:.1}, efficiency {:.1}) | action rationale: {}",
        decision.goal.description,
        source,
        decision.plan.chosen.description,
        decision.plan.chosen.safety_score,
        decision.plan.chosen.efficiency_score,
        if decision.action.justification.is_empty() {
            "(none)"
        } else {
            &decision.action.justification
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedBackend};
    use crate::scenario::{self, ScenarioConfig};
    use crate::sim::MetaAction;

    fn plan_json() -> String {
        serde_json::json!({
            "plans": [{"id": 1, "description": "merge when the gap opens", "pros": "p", "cons": "c", "difficulty": "medium", "safety": 8, "efficiency": 7}],
            "ranking": [1],
            "selected": 1
        })
        .to_string()
    }

    fn driver_backend() -> ScriptedBackend {
        ScriptedBackend::new(
            vec![
                ScriptRule::substring("infer its likely intention", "[]"),
                ScriptRule::substring("Brainstorm", plan_json()),
                ScriptRule::substring("still feasible", "keep"),
                ScriptRule::substring("Choose exactly one meta-action", r#"{"action": "Idle", "justification": "cruise"}"#),
            ],
            "unmatched",
        )
    }

    #[tokio::test]
    async fn first_frame_generates_then_keeps() {
        let w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        let backend = driver_backend();
        let mut agent = DrivingAgent::new(VehicleId(1), ScenarioKind::RampMerge);

        let scene = agent.observe(&w).unwrap();
        let first = agent.reason(&scene, "(none)", &backend).await.unwrap();
        assert_eq!(first.plan_source, PlanSource::Generated);
        assert_eq!(first.action.action, MetaAction::Idle);
        assert!(!first.degraded);
        let calls_first = backend.call_count();
        assert!(calls_first <= 3, "intentions + plan + action, got {calls_first}");

        let scene = agent.observe(&w).unwrap();
        let second = agent.reason(&scene, "(none)", &backend).await.unwrap();
        assert_eq!(second.plan_source, PlanSource::Kept);
        assert_eq!(second.plan.chosen, first.plan.chosen, "kept plan is unchanged");
        assert!(backend.call_count() - calls_first <= 3);
    }

    #[tokio::test]
    async fn replan_verdict_regenerates() {
        let w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        let backend = ScriptedBackend::new(
            vec![
                ScriptRule::substring("infer its likely intention", "[]"),
                ScriptRule::substring("Brainstorm", plan_json()),
                ScriptRule::substring("still feasible", "replan: traffic closed the gap"),
                ScriptRule::substring("Choose exactly one meta-action", r#"{"action": "Decelerate"}"#),
            ],
            "unmatched",
        );
        let mut agent = DrivingAgent::new(VehicleId(1), ScenarioKind::RampMerge);
        let scene = agent.observe(&w).unwrap();
        agent.reason(&scene, "", &backend).await.unwrap();
        let scene = agent.observe(&w).unwrap();
        let second = agent.reason(&scene, "", &backend).await.unwrap();
        assert_eq!(second.plan_source, PlanSource::Replanned);
        assert_eq!(second.plan.status, PlanStatus::Active, "fresh plan is active");
        assert_eq!(second.action.action, MetaAction::Decelerate);
    }

    #[tokio::test]
    async fn history_window_tracks_last_two_frames() {
        let w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        let mut agent = DrivingAgent::new(VehicleId(0), ScenarioKind::RampMerge);
        let s1 = agent.observe(&w).unwrap();
        assert!(s1.history.is_empty());
        let s2 = agent.observe(&w).unwrap();
        assert_eq!(s2.history.len(), 1);
        let s3 = agent.observe(&w).unwrap();
        assert_eq!(s3.history.len(), 2);
        let s4 = agent.observe(&w).unwrap();
        assert_eq!(s4.history.len(), 2, "window capped at two prior frames");
    }

    #[tokio::test]
    async fn degraded_stages_do_not_kill_the_cycle() {
        let w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        // Intentions and action answers are garbage; plan is valid.
        let backend = ScriptedBackend::new(
            vec![ScriptRule::substring("Brainstorm", plan_json())],
            "garbage",
        );
        let mut agent = DrivingAgent::new(VehicleId(1), ScenarioKind::RampMerge);
        let scene = agent.observe(&w).unwrap();
        let out = agent.reason(&scene, "", &backend).await.unwrap();
        assert!(out.degraded);
        assert!(out.intentions.is_empty());
        assert_eq!(out.action.action, MetaAction::Idle, "action fell back to Idle");
        assert!(!out.diagnostics.is_empty());
    }

    #[test]
    fn planning_text_is_complete() {
        let decision = AgentDecision {
            goal: Goal {
                kind: crate::planning::GoalKind::General,
                description: "maintaining safe and efficient driving".into(),
                deadline_hint: None,
            },
            intentions: vec![],
            plan: Plan::fallback(4),
            plan_source: PlanSource::Kept,
            action: ActionDecision { action: MetaAction::Idle, justification: "clear".into() },
            degraded: false,
            diagnostics: vec![],
        };
        let text = planning_process_text(&decision);
        assert!(text.contains("goal: maintaining safe and efficient driving"));
        assert!(text.contains("kept plan: follow current lane"));
        assert!(text.contains("action rationale: clear"));
    }
}
