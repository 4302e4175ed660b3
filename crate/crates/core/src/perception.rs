//! Textual scene descriptions for agent reasoning.
//!
//! The description doubles as the memory retrieval key, so it must be a
//! pure, byte-stable function of the world: fixed neighbor ordering, every
//! number rendered to exactly one decimal place, and a fenced
//! machine-readable block embedded in the prose so tests (and parsers) can
//! recover the structured fields exactly.

use serde::{Deserialize, Serialize};

use crate::jsonx;
use crate::road::{forward_arc, Junction, NetworkKind};
use crate::sim::{SimError, VehicleId, VehicleKind, World, JUNCTION_YIELD_BACK, LEADER_LOOKAHEAD};

/// Longitudinal perception range, m (bumper gap).
pub const PERCEPTION_RANGE_M: f64 = 100.0;
/// Number of prior frames of neighbor observations kept for reasoning.
pub const HISTORY_FRAMES: usize = 2;

/// One observed nearby vehicle, from the ego's point of view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborObs {
    pub id: VehicleId,
    /// Lane column in the shared frame (segments that run side by side use
    /// distinct columns, so a ramp vehicle and a main-road vehicle compare
    /// directly). Vehicles ahead on the ego's route across a junction are
    /// reported in the ego's own column.
    pub lane: i32,
    /// Signed bumper gap, m; positive = ahead of ego, 0.0 = alongside.
    pub relative_s: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Speed relative to ego (positive = faster), m/s.
    pub dv: f64,
}

/// The ego vehicle's own observed state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoObs {
    /// Lane column in the shared frame.
    pub lane: i32,
    /// Local position along the current segment, m.
    pub s: f64,
    /// Speed, m/s.
    pub v: f64,
    pub segment: String,
    /// Lanes on the current segment.
    pub lane_count: usize,
    /// Distance left on the ramp before it ends (ramp agents only).
    pub remaining_ramp_distance: Option<f64>,
    /// Route distance to the planned exit (ring agents that have not yet
    /// exited; includes the approach when still on an entry road).
    pub remaining_to_exit: Option<f64>,
}

/// Everything an agent perceives at one decision frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    /// Canonical multi-line prose + fenced machine block.
    pub text: String,
    pub ego: EgoObs,
    /// Sorted by (lane column, |relative_s|, id).
    pub neighbors: Vec<NeighborObs>,
    /// Decision index the observation was taken at.
    pub frame: u32,
    /// Up to [`HISTORY_FRAMES`] prior neighbor lists, oldest first.
    pub history: Vec<Vec<NeighborObs>>,
}

/// Contents of the fenced machine block inside the scene text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MachineScene {
    pub frame: u32,
    pub ego: EgoObs,
    pub neighbors: Vec<NeighborObs>,
}

/// Round to one decimal, normalizing -0.0 away.
fn round1(x: f64) -> f64 {
    let r = (x * 10.0).round() / 10.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn fmt1(x: f64) -> String {
    format!("{:.1}", round1(x))
}

/// Observe the world from `ego_id`'s seat.
///
/// Neighbors are every vehicle within [`PERCEPTION_RANGE_M`] longitudinally
/// in the ego's lane column or the two adjacent columns, plus traffic on
/// the receiving lane of the next junction along the ego's route. `history`
/// is the caller's record of previous frames' neighbor lists; only the most
/// recent [`HISTORY_FRAMES`] entries are kept.
pub fn describe(
    world: &World,
    ego_id: VehicleId,
    history: &[Vec<NeighborObs>],
) -> Result<SceneDescription, SimError> {
    let ego = world.vehicle(ego_id)?;
    if ego.kind != VehicleKind::LlmAgent {
        return Err(SimError::NotAnAgent(ego_id));
    }
    let ego_seg = world.road.seg(&ego.segment);
    let ego_col = ego_seg.slot(ego.lane_index);
    let ego_x = ego_seg.frame_pos(ego.s);
    let period = world.road.frame_period(ego_seg.frame);

    let mut neighbors: Vec<NeighborObs> = Vec::new();
    let mut seen: std::collections::BTreeSet<VehicleId> = std::collections::BTreeSet::new();

    for other in world.vehicles.values() {
        if other.id == ego_id {
            continue;
        }
        let seg = world.road.seg(&other.segment);
        if seg.frame != ego_seg.frame {
            continue;
        }
        let col = seg.slot(other.lane_index);
        if (col - ego_col).abs() > 1 {
            continue;
        }
        let delta = world.road.frame_delta(period, ego_x, seg.frame_pos(other.s));
        let half = (ego.length + other.length) / 2.0;
        let rel = if delta.abs() <= half { 0.0 } else { delta - half.copysign(delta) };
        if rel.abs() > PERCEPTION_RANGE_M {
            continue;
        }
        seen.insert(other.id);
        neighbors.push(NeighborObs { id: other.id, lane: col, relative_s: rel, v: other.v, dv: other.v - ego.v });
    }

    // Traffic on the receiving lane of the next junction: visible as
    // in-path vehicles even though it sits in a different frame.
    if let Some(proj) = world.route_projection(ego) {
        if proj.remaining <= LEADER_LOOKAHEAD {
            let next_seg = world.road.seg(&proj.next);
            if next_seg.frame != ego_seg.frame {
                let next_period = next_seg.cyclic.then_some(next_seg.length);
                for other in world.vehicles.values() {
                    if other.id == ego_id
                        || seen.contains(&other.id)
                        || other.segment != proj.next
                        || other.lane_index != proj.landing_lane
                    {
                        continue;
                    }
                    let delta = match next_period {
                        Some(c) => crate::road::wrap_centered(other.s - proj.entry_pos, c),
                        None => other.s - proj.entry_pos,
                    };
                    if !(-JUNCTION_YIELD_BACK..=LEADER_LOOKAHEAD).contains(&delta) {
                        continue;
                    }
                    let half = (ego.length + other.length) / 2.0;
                    let rel = (proj.remaining + delta - half).max(0.0);
                    if rel > PERCEPTION_RANGE_M {
                        continue;
                    }
                    seen.insert(other.id);
                    neighbors.push(NeighborObs {
                        id: other.id,
                        lane: ego_col,
                        relative_s: rel,
                        v: other.v,
                        dv: other.v - ego.v,
                    });
                }
            }
        }
    }

    neighbors.sort_by(|a, b| {
        a.lane
            .cmp(&b.lane)
            .then(a.relative_s.abs().total_cmp(&b.relative_s.abs()))
            .then(a.id.cmp(&b.id))
    });
    for n in neighbors.iter_mut() {
        n.relative_s = round1(n.relative_s);
        n.v = round1(n.v);
        n.dv = round1(n.dv);
    }

    // In a merge network the ramp is the side segment (non-zero base
    // column); merging is a lane change, so there is no junction to key on.
    let remaining_ramp = match world.road.kind {
        NetworkKind::RampMerge if ego_seg.base_slot > 0 => {
            Some(round1(ego_seg.length - ego.s))
        }
        _ => None,
    };
    let remaining_exit = match world.road.kind {
        NetworkKind::Roundabout => remaining_to_exit(world, ego_id).map(round1),
        NetworkKind::RampMerge => None,
    };

    let ego_obs = EgoObs {
        lane: ego_col,
        s: round1(ego.s),
        v: round1(ego.v),
        segment: ego.segment.0.clone(),
        lane_count: ego_seg.lane_count,
        remaining_ramp_distance: remaining_ramp,
        remaining_to_exit: remaining_exit,
    };

    let kept_history: Vec<Vec<NeighborObs>> = history
        .iter()
        .skip(history.len().saturating_sub(HISTORY_FRAMES))
        .cloned()
        .collect();

    let text = compose_text(world.frame, &ego_obs, &neighbors, &kept_history, ego_id);
    Ok(SceneDescription { text, ego: ego_obs, neighbors, frame: world.frame, history: kept_history })
}

/// Route distance from a roundabout agent to its planned exit junction;
/// `None` once past it (or if the route has no exit ahead).
fn remaining_to_exit(world: &World, ego_id: VehicleId) -> Option<f64> {
    let ego = world.vehicle(ego_id).ok()?;
    let seg = world.road.seg(&ego.segment);
    if seg.cyclic {
        let next = ego.next_route_segment()?;
        let Junction::Exit { arc, .. } = world.road.exit_to(&ego.segment, next)? else {
            return None;
        };
        Some(forward_arc(ego.s.rem_euclid(seg.length), *arc, seg.length))
    } else {
        // On an entry road: remaining approach + arc from the landing point
        // to the exit junction.
        let next = ego.next_route_segment()?.clone();
        let Junction::Continuation { to, entry_pos, .. } =
            world.road.continuation_from(&ego.segment)?
        else {
            return None;
        };
        if *to != next {
            return None;
        }
        let ring = world.road.seg(&next);
        if !ring.cyclic {
            return None;
        }
        let exit_seg = ego.route.last()?;
        let Junction::Exit { arc, .. } = world.road.exit_to(&next, exit_seg)? else {
            return None;
        };
        Some((seg.length - ego.s) + forward_arc(*entry_pos, *arc, ring.length))
    }
}

/// Compact rendering of prior neighbor lists for prompt injection.
pub fn history_text(history: &[Vec<NeighborObs>]) -> String {
    if history.is_empty() {
        return "(no history available)".to_string();
    }
    let len = history.len();
    let mut out = String::new();
    for (j, entry) in history.iter().enumerate() {
        let age = len - j;
        if entry.is_empty() {
            out.push_str(&format!("[t-{age}] no nearby vehicles\n"));
        } else {
            let items: Vec<String> = entry
                .iter()
                .map(|n| {
                    format!("{} lane {} at {} m, {} m/s", n.id, n.lane, fmt1(n.relative_s), fmt1(n.v))
                })
                .collect();
            out.push_str(&format!("[t-{age}] {}\n", items.join("; ")));
        }
    }
    out.trim_end().to_string()
}

fn neighbor_line(n: &NeighborObs) -> String {
    let place = if n.relative_s > 0.0 {
        format!("{} m ahead", fmt1(n.relative_s))
    } else if n.relative_s < 0.0 {
        format!("{} m behind", fmt1(-n.relative_s))
    } else {
        "alongside".to_string()
    };
    let pace = if n.dv > 0.0 {
        format!("{} m/s faster than ego", fmt1(n.dv))
    } else if n.dv < 0.0 {
        format!("{} m/s slower than ego", fmt1(-n.dv))
    } else {
        "matching ego speed".to_string()
    };
    format!("- {}: lane column {}, {}, speed {} m/s, {}", n.id, n.lane, place, fmt1(n.v), pace)
}

fn compose_text(
    frame: u32,
    ego: &EgoObs,
    neighbors: &[NeighborObs],
    history: &[Vec<NeighborObs>],
    ego_id: VehicleId,
) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Decision frame {frame}. Ego vehicle {ego_id} on segment {} ({} lane(s)), lane column {}, position {} m, speed {} m/s.\n",
        ego.segment,
        ego.lane_count,
        ego.lane,
        fmt1(ego.s),
        fmt1(ego.v),
    ));
    if let Some(d) = ego.remaining_ramp_distance {
        out.push_str(&format!(
            "Remaining ramp distance: {} m. The ramp ends there; merge left onto the main road before that.\n",
            fmt1(d)
        ));
    }
    if let Some(d) = ego.remaining_to_exit {
        out.push_str(&format!(
            "Remaining distance to the planned exit: {} m. Stay in the outer lane to take it.\n",
            fmt1(d)
        ));
    }
    if neighbors.is_empty() {
        out.push_str("No nearby vehicles.\n");
    } else {
        out.push_str(&format!(
            "Nearby vehicles within {} m (closest first per lane column):\n",
            fmt1(PERCEPTION_RANGE_M)
        ));
        for n in neighbors {
            out.push_str(&neighbor_line(n));
            out.push('\n');
        }
    }
    if !history.is_empty() {
        out.push_str("Recent neighbor history (oldest first):\n");
        out.push_str(&history_text(history));
        out.push('\n');
    }
    let machine = MachineScene {
        frame,
        ego: ego.clone(),
        neighbors: neighbors.to_vec(),
    };
    out.push_str("```scene\n");
    out.push_str(&serde_json::to_string(&machine).expect("scene serializes"));
    out.push_str("\n```\n");
    out
}

/// Recover the structured fields from a scene text's fenced machine block.
pub fn parse_machine_block(text: &str) -> Option<MachineScene> {
    let start = text.find("```scene")?;
    let rest = &text[start + "```scene".len()..];
    let end = rest.find("```")?;
    jsonx::first_json::<MachineScene>(&rest[..end])
}
