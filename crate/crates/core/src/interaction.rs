//! Intention inference for surrounding vehicles.
//!
//! Before planning, an agent asks its language backend what each nearby
//! vehicle is likely to do next, the way a human driver reads traffic.
//! Responses arrive as JSON-in-prose; parsing is tolerant of surrounding
//! text but strict about the closed intention vocabulary, and anything that
//! cannot be validated is dropped with a diagnostic rather than raised.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::jsonx;
use crate::llm::{ChatBackend, ChatMessage};
use crate::perception::{history_text, SceneDescription};
use crate::prompts;
use crate::sim::VehicleId;

/// Parse retries granted after the first failed attempt.
pub const PARSE_RETRIES: usize = 2;

/// Closed vocabulary of inferable intentions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntentionKind {
    #[serde(rename = "accelerate")]
    Accelerate,
    #[serde(rename = "decelerate")]
    Decelerate,
    #[serde(rename = "lane-change-left")]
    LaneChangeLeft,
    #[serde(rename = "lane-change-right")]
    LaneChangeRight,
    #[serde(rename = "keep")]
    Keep,
}

impl IntentionKind {
    pub fn parse(text: &str) -> Option<IntentionKind> {
        match text.trim().to_ascii_lowercase().as_str() {
            "accelerate" => Some(IntentionKind::Accelerate),
            "decelerate" => Some(IntentionKind::Decelerate),
            "lane-change-left" => Some(IntentionKind::LaneChangeLeft),
            "lane-change-right" => Some(IntentionKind::LaneChangeRight),
            "keep" => Some(IntentionKind::Keep),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            IntentionKind::Accelerate => "accelerate",
            IntentionKind::Decelerate => "decelerate",
            IntentionKind::LaneChangeLeft => "lane-change-left",
            IntentionKind::LaneChangeRight => "lane-change-right",
            IntentionKind::Keep => "keep",
        }
    }
}

/// One vehicle's estimated intention.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntentionEstimate {
    pub vehicle_id: VehicleId,
    pub intention: IntentionKind,
    pub rationale: String,
}

/// Result of an inference round. `degraded` marks responses that could not
/// be obtained or parsed; the pipeline continues with what it has.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IntentionOutcome {
    pub estimates: Vec<IntentionEstimate>,
    pub degraded: bool,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IntentionParseError {
    #[error("no JSON array found in response")]
    NoArray,
}

#[derive(Deserialize)]
struct RawEstimate {
    vehicle_id: serde_json::Value,
    intention: String,
    #[serde(default)]
    rationale: Option<String>,
}

fn vehicle_id_from_value(value: &serde_json::Value) -> Option<VehicleId> {
    match value {
        serde_json::Value::String(s) => VehicleId::from_str(s).ok(),
        serde_json::Value::Number(n) => n.as_u64().map(|v| VehicleId(v as u32)),
        _ => None,
    }
}

/// Extract intention estimates from arbitrary backend text: the first
/// well-formed JSON array wins, entries that fail validation are dropped
/// (reported in the second tuple slot), and only the complete absence of an
/// array is an error.
pub fn parse_intentions(
    raw: &str,
) -> Result<(Vec<IntentionEstimate>, Vec<String>), IntentionParseError> {
    let values: Vec<serde_json::Value> =
        jsonx::first_json_array(raw).ok_or(IntentionParseError::NoArray)?;
    let mut estimates = Vec::new();
    let mut dropped = Vec::new();
    for (i, value) in values.into_iter().enumerate() {
        let raw_entry: RawEstimate = match serde_json::from_value(value) {
            Ok(e) => e,
            Err(e) => {
                dropped.push(format!("entry {i}: not a valid estimate object ({e})"));
                continue;
            }
        };
        let Some(vehicle_id) = vehicle_id_from_value(&raw_entry.vehicle_id) else {
            dropped.push(format!("entry {i}: unusable vehicle_id {}", raw_entry.vehicle_id));
            continue;
        };
        let Some(intention) = IntentionKind::parse(&raw_entry.intention) else {
            dropped.push(format!(
                "entry {i}: intention {:?} outside the closed set",
                raw_entry.intention
            ));
            continue;
        };
        estimates.push(IntentionEstimate {
            vehicle_id,
            intention,
            rationale: raw_entry.rationale.unwrap_or_default(),
        });
    }
    Ok((estimates, dropped))
}

/// Ask the backend what each neighbor intends to do.
///
/// Zero neighbors short-circuits without a backend call. Estimates naming
/// vehicles absent from the scene are dropped; duplicate mentions keep the
/// first. Backend failure or persistent parse failure yields an empty,
/// degraded outcome — never an error.
pub async fn infer_intentions(
    scene: &SceneDescription,
    llm: &dyn ChatBackend,
) -> IntentionOutcome {
    if scene.neighbors.is_empty() {
        return IntentionOutcome::default();
    }
    let prompt = prompts::render(
        &prompts::INTENTIONS,
        &[("scene", scene.text.as_str()), ("history", &history_text(&scene.history))],
    )
    .expect("intentions template placeholders");
    let messages =
        vec![ChatMessage::system(prompts::SYSTEM.text), ChatMessage::user(prompt)];

    let mut diagnostics = Vec::new();
    for attempt in 0..=PARSE_RETRIES {
        let raw = match llm.chat(&messages).await {
            Ok(r) => r,
            Err(e) => {
                diagnostics.push(format!("backend failure: {e}"));
                return IntentionOutcome { estimates: Vec::new(), degraded: true, diagnostics };
            }
        };
        match parse_intentions(&raw) {
            Ok((parsed, dropped)) => {
                diagnostics.extend(dropped);
                let mut seen = std::collections::BTreeSet::new();
                let mut estimates = Vec::new();
                for est in parsed {
                    if !scene.neighbors.iter().any(|n| n.id == est.vehicle_id) {
                        diagnostics.push(format!(
                            "estimate for {} dropped: not in the neighbor list",
                            est.vehicle_id
                        ));
                        continue;
                    }
                    if !seen.insert(est.vehicle_id) {
                        diagnostics.push(format!(
                            "duplicate estimate for {} dropped",
                            est.vehicle_id
                        ));
                        continue;
                    }
                    estimates.push(est);
                }
                return IntentionOutcome { estimates, degraded: false, diagnostics };
            }
            Err(e) => {
                diagnostics.push(format!("attempt {}: {e}", attempt + 1));
            }
        }
    }
    IntentionOutcome { estimates: Vec::new(), degraded: true, diagnostics }
}

/// Render estimates for injection into downstream prompts.
pub fn intentions_text(estimates: &[IntentionEstimate]) -> String {
    if estimates.is_empty() {
        return "(no intention estimates)".to_string();
    }
    estimates
        .iter()
        .map(|e| {
            if e.rationale.is_empty() {
                format!("- {} intends to {}", e.vehicle_id, e.intention.name())
            } else {
                format!("- {} intends to {} ({})", e.vehicle_id, e.intention.name(), e.rationale)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptRule, ScriptedBackend};
    use crate::perception::describe;
    use crate::scenario::{self, ScenarioConfig};

    fn scene() -> SceneDescription {
        let w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        describe(&w, VehicleId(0), &[]).unwrap()
    }

    fn lone_scene() -> SceneDescription {
        let mut w = scenario::build_world(&ScenarioConfig::ramp_merge(3), 30.0).unwrap();
        let ids: Vec<VehicleId> =
            w.vehicles.keys().copied().filter(|id| *id != VehicleId(1)).collect();
        for id in ids {
            w.vehicles.remove(&id);
        }
        describe(&w, VehicleId(1), &[]).unwrap()
    }

    #[test]
    fn parse_accepts_direct_array() {
        let (got, dropped) = parse_intentions(
            r#"[{"vehicle_id":"v3","intention":"accelerate","rationale":"gap opening"}]"#,
        )
        .unwrap();
        assert_eq!(dropped, Vec::<String>::new());
        assert_eq!(
            got,
            vec![IntentionEstimate {
                vehicle_id: VehicleId(3),
                intention: IntentionKind::Accelerate,
                rationale: "gap opening".into(),
            }]
        );
    }

    #[test]
    fn parse_extracts_array_from_prose() {
        let raw = "Looking at the scene, I believe the following:\n\
            [{\"vehicle_id\": \"v2\", \"intention\": \"keep\", \"rationale\": \"steady\"},\n\
             {\"vehicle_id\": 4, \"intention\": \"decelerate\"}]\n\
            Let me know if you need more detail.";
        let (got, dropped) = parse_intentions(raw).unwrap();
        assert!(dropped.is_empty());
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].vehicle_id, VehicleId(2));
        assert_eq!(got[1].vehicle_id, VehicleId(4), "numeric ids accepted");
        assert_eq!(got[1].rationale, "", "rationale optional");
    }

    #[test]
    fn parse_rejects_open_vocabulary() {
        let raw = r#"[
            {"vehicle_id": "v2", "intention": "overtake", "rationale": "x"},
            {"vehicle_id": "v3", "intention": "keep", "rationale": "y"}
        ]"#;
        let (got, dropped) = parse_intentions(raw).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].vehicle_id, VehicleId(3));
        assert_eq!(dropped.len(), 1);
        assert!(dropped[0].contains("overtake"), "{dropped:?}");
    }

    #[test]
    fn parse_requires_an_array() {
        assert_eq!(
            parse_intentions("everyone seems calm today").unwrap_err(),
            IntentionParseError::NoArray
        );
    }

    #[tokio::test]
    async fn zero_neighbors_short_circuits_without_calls() {
        let backend = ScriptedBackend::constant("[]");
        let scene = lone_scene();
        assert!(scene.neighbors.is_empty());
        let out = infer_intentions(&scene, &backend).await;
        assert_eq!(out, IntentionOutcome::default());
        assert_eq!(backend.call_count(), 0);
    }

    #[tokio::test]
    async fn valid_response_yields_estimates_in_input_order() {
        let scene = scene();
        let (a, b) = (scene.neighbors[1].id, scene.neighbors[0].id);
        let backend = ScriptedBackend::constant(format!(
            r#"[{{"vehicle_id":"{a}","intention":"keep","rationale":"r1"}},
                {{"vehicle_id":"{b}","intention":"decelerate","rationale":"r2"}}]"#
        ));
        let out = infer_intentions(&scene, &backend).await;
        assert!(!out.degraded);
        assert_eq!(out.estimates.len(), 2);
        assert_eq!(out.estimates[0].vehicle_id, a, "input order preserved");
        assert_eq!(out.estimates[1].vehicle_id, b);
        assert_eq!(backend.call_count(), 1);
    }

    #[tokio::test]
    async fn unknown_vehicles_dropped_others_kept() {
        let scene = scene();
        let known = scene.neighbors[0].id;
        let backend = ScriptedBackend::constant(format!(
            r#"[{{"vehicle_id":"v99","intention":"keep","rationale":""}},
                {{"vehicle_id":"{known}","intention":"keep","rationale":""}},
                {{"vehicle_id":"{known}","intention":"accelerate","rationale":"dup"}}]"#
        ));
        let out = infer_intentions(&scene, &backend).await;
        assert!(!out.degraded);
        assert_eq!(out.estimates.len(), 1);
        assert_eq!(out.estimates[0].vehicle_id, known);
        assert_eq!(out.estimates[0].intention, IntentionKind::Keep, "first mention wins");
        assert_eq!(out.diagnostics.len(), 2, "{:?}", out.diagnostics);
    }

    #[tokio::test]
    async fn persistent_garbage_degrades_after_retries() {
        let backend = ScriptedBackend::constant("no structured data here");
        let out = infer_intentions(&scene(), &backend).await;
        assert!(out.degraded);
        assert!(out.estimates.is_empty());
        assert_eq!(backend.call_count(), 1 + PARSE_RETRIES);
    }

    #[tokio::test]
    async fn prompt_carries_scene_and_history() {
        let scene = scene();
        let backend = ScriptedBackend::new(
            vec![ScriptRule::substring("Nearby vehicles", "[]")],
            "WRONG",
        );
        let out = infer_intentions(&scene, &backend).await;
        assert!(!out.degraded, "scene text must appear in the prompt");
        let log = backend.exchanges();
        assert!(log[0].messages[0].content.contains("TurnLeft"), "system prompt present");
        assert!(log[0].messages[1].content.contains("(no history available)"));
    }
}
