//! Simulation kernel: vehicle state, meta-actions, longitudinal dynamics,
//! lane changes, collisions, and time-to-collision.
//!
//! The world advances in decision intervals (default 0.5 s) that are
//! internally integrated as fixed 0.1 s explicit-Euler substeps. All
//! vehicles move simultaneously within a step: accelerations are computed
//! from the frozen start-of-substep state, positions advance with the old
//! speeds, then speeds update. Background vehicles follow the Intelligent
//! Driver Model; agent vehicles track a target speed set by meta-actions.
//!
//! Everything here is deterministic: no randomness, ordered maps keyed by
//! vehicle id, and no wall-clock reads.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::{
    forward_arc, wrap_centered, Junction, LaneSide, RoadNetwork, SegmentId,
};

/// Integration substep, seconds.
pub const SUBSTEP_S: f64 = 0.1;
/// Default decision interval (2 Hz policy), seconds.
pub const DECISION_INTERVAL_S: f64 = 0.5;
/// Target-speed change per Accelerate/Decelerate action, m/s.
pub const TARGET_SPEED_STEP: f64 = 2.5;
/// Upper bound on commanded target speed, m/s.
pub const MAX_TARGET_SPEED: f64 = 30.0;
/// A lane change runs to completion within one decision interval.
pub const LANE_CHANGE_DURATION_S: f64 = 0.5;
/// Vehicle footprint, meters.
pub const VEHICLE_LENGTH: f64 = 5.0;
pub const VEHICLE_WIDTH: f64 = 2.0;
/// Proportional gain of the agent speed controller, 1/s.
pub const SPEED_GAIN: f64 = 2.0;
/// Acceleration bounds for agent vehicles, m/s^2.
pub const MAX_ACCEL: f64 = 3.0;
pub const MAX_BRAKE: f64 = 5.0;
/// How far ahead a vehicle looks for a leader, meters.
pub const LEADER_LOOKAHEAD: f64 = 100.0;
/// Background vehicles nearing a junction yield to crossing traffic within
/// this many meters upstream of the junction on the receiving road.
pub const JUNCTION_YIELD_BACK: f64 = 15.0;

/// Vehicle identifier; displayed as `v<N>`.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub struct VehicleId(pub u32);

impl std::fmt::Display for VehicleId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl std::str::FromStr for VehicleId {
    type Err = std::num::ParseIntError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('v').unwrap_or(s);
        digits.parse::<u32>().map(VehicleId)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleKind {
    /// Controlled by the language-model pipeline via meta-actions.
    LlmAgent,
    /// Background traffic following the Intelligent Driver Model.
    IdmBackground,
}

/// The discrete action vocabulary available to agents.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum MetaAction {
    TurnLeft,
    Idle,
    TurnRight,
    Accelerate,
    Decelerate,
}

impl MetaAction {
    pub const ALL: [MetaAction; 5] = [
        MetaAction::TurnLeft,
        MetaAction::Idle,
        MetaAction::TurnRight,
        MetaAction::Accelerate,
        MetaAction::Decelerate,
    ];

    /// Canonical name used in prompts and logs.
    pub fn name(self) -> &'static str {
        match self {
            MetaAction::TurnLeft => "TurnLeft",
            MetaAction::Idle => "Idle",
            MetaAction::TurnRight => "TurnRight",
            MetaAction::Accelerate => "Accelerate",
            MetaAction::Decelerate => "Decelerate",
        }
    }

    /// Parse a model-produced action name leniently: case, punctuation and
    /// common synonyms (including highway-env's FASTER/SLOWER/LANE_LEFT/
    /// LANE_RIGHT vocabulary) are accepted. Anything outside the closed
    /// action set yields `None`.
    pub fn parse_loose(raw: &str) -> Option<MetaAction> {
        let norm: String = raw
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        match norm.as_str() {
            "turnleft" | "laneleft" | "lanechangeleft" | "left" | "changelaneleft"
            | "mergeleft" | "leftlanechange" => Some(MetaAction::TurnLeft),
            "turnright" | "laneright" | "lanechangeright" | "right"
            | "changelaneright" | "mergeright" | "rightlanechange" => {
                Some(MetaAction::TurnRight)
            }
            "accelerate" | "acceleration" | "faster" | "speedup" | "accel"
            | "increasespeed" => Some(MetaAction::Accelerate),
            "decelerate" | "deceleration" | "slower" | "slowdown" | "brake"
            | "decel" | "reducespeed" => Some(MetaAction::Decelerate),
            "idle" | "keep" | "maintain" | "stay" | "noop" | "keeplane"
            | "keepspeed" | "maintainspeed" | "holdlane" | "cruise"
            | "keepcurrentspeed" | "maintaincurrentspeed" => Some(MetaAction::Idle),
            _ => None,
        }
    }
}

impl std::fmt::Display for MetaAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Intelligent Driver Model parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Jam distance (minimum bumper gap), m.
    pub s0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
    /// Maximum acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable braking deceleration (positive), m/s^2.
    pub b_comf: f64,
    /// Acceleration exponent.
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            v0: 25.0,
            s0: 10.0,
            t_headway: 1.5,
            a_max: 3.0,
            b_comf: 5.0,
            delta: 4.0,
        }
    }
}

/// IDM acceleration for a vehicle at speed `v` behind a leader `gap` meters
/// ahead (bumper-to-bumper) moving at `v_leader`. Pass `f64::INFINITY` for
/// a free road. The result is clamped to `[-2*b_comf, a_max]`.
pub fn idm_acceleration(v: f64, gap: f64, v_leader: f64, p: &IdmParams) -> f64 {
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let a = if gap.is_finite() {
        let s_star = p.s0
            + v * p.t_headway
            + v * (v - v_leader) / (2.0 * (p.a_max * p.b_comf).sqrt());
        // Only the forward-pressure part of s* applies; a much faster
        // leader cannot push the gap term negative.
        let s_star = s_star.max(0.0);
        let gap = gap.max(1e-6);
        p.a_max * (free - (s_star / gap).powi(2))
    } else {
        p.a_max * free
    };
    a.clamp(-2.0 * p.b_comf, p.a_max)
}

/// An in-progress lane change. Progress runs 0 -> 1 over
/// [`LANE_CHANGE_DURATION_S`]; the vehicle is re-registered in the target
/// lane once progress crosses 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaneChange {
    pub target_segment: SegmentId,
    pub target_lane: usize,
    /// +1 when moving toward higher slots (right/outward), -1 otherwise.
    pub slot_delta: i32,
    pub progress: f64,
    pub rebased: bool,
}

/// Full dynamic state of one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: VehicleId,
    pub kind: VehicleKind,
    pub segment: SegmentId,
    pub lane_index: usize,
    /// Longitudinal position along the segment, m.
    pub s: f64,
    /// Lateral offset from the current lane's centerline, m (nonzero only
    /// while a lane change is in progress).
    pub lateral: f64,
    /// Speed, m/s (never negative).
    pub v: f64,
    /// Speed the longitudinal controller tracks, m/s.
    pub target_speed: f64,
    pub length: f64,
    pub width: f64,
    /// Segments this vehicle intends to traverse, in order.
    pub route: Vec<SegmentId>,
    pub maneuver: Option<LaneChange>,
    /// Distance traveled along the current segment since entering it, m.
    pub segment_odometer: f64,
    pub idm: IdmParams,
}

impl VehicleState {
    /// A stopped background vehicle with default geometry, useful as a
    /// starting point when composing worlds by hand.
    pub fn background(id: VehicleId, segment: &str, lane: usize, s: f64, v: f64) -> Self {
        VehicleState {
            id,
            kind: VehicleKind::IdmBackground,
            segment: segment.into(),
            lane_index: lane,
            s,
            lateral: 0.0,
            v,
            target_speed: v,
            length: VEHICLE_LENGTH,
            width: VEHICLE_WIDTH,
            route: vec![segment.into()],
            maneuver: None,
            segment_odometer: 0.0,
            idm: IdmParams { v0: v.max(0.1), ..IdmParams::default() },
        }
    }

    pub fn agent(id: VehicleId, segment: &str, lane: usize, s: f64, v: f64) -> Self {
        VehicleState {
            kind: VehicleKind::LlmAgent,
            ..VehicleState::background(id, segment, lane, s, v)
        }
    }

    /// Next segment on the route after the current one.
    pub fn next_route_segment(&self) -> Option<&SegmentId> {
        let at = self.route.iter().position(|s| s == &self.segment)?;
        self.route.get(at + 1)
    }
}

/// Time to collision, seconds; `INFINITE` when no leader is closing.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Ttc(pub f64);

impl Ttc {
    pub const INFINITE: Ttc = Ttc(f64::INFINITY);

    pub fn seconds(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

/// Noteworthy things that happened while applying actions or stepping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    /// A lane change was requested where no adjacent lane exists (or one is
    /// already running); the action was downgraded to Idle.
    InfeasibleLaneChange { id: VehicleId, action: MetaAction },
    SegmentTransition { id: VehicleId, from: SegmentId, to: SegmentId },
    LaneChangeCompleted { id: VehicleId, segment: SegmentId, lane: usize },
    Collision { a: VehicleId, b: VehicleId, time: f64 },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no action supplied for agent {0}")]
    MissingAction(VehicleId),
    #[error("action supplied for {0}, which is not a controllable agent")]
    NotAnAgent(VehicleId),
    #[error("unknown vehicle {0}")]
    UnknownVehicle(VehicleId),
    #[error("step called on a finished world (t = {0:.1} s)")]
    EpisodeOver(f64),
    #[error("dt must be a positive multiple of the {SUBSTEP_S} s substep, got {0}")]
    BadDt(f64),
    #[error("invalid world: {0}")]
    InvalidWorld(String),
}

/// Result of one decision-interval step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    /// Colliding pairs detected this step (ids ascending within each pair);
    /// the step halts at the first substep that produces any.
    pub collisions: Vec<(VehicleId, VehicleId)>,
    pub events: Vec<SimEvent>,
    /// True once the world has reached a terminal state (collision or
    /// horizon); further `step` calls are an error.
    pub done: bool,
    pub sim_time: f64,
}

/// Landing data for the next junction on a vehicle's route.
pub(crate) struct RouteProjection {
    pub(crate) remaining: f64,
    pub(crate) next: SegmentId,
    pub(crate) landing_lane: usize,
    pub(crate) entry_pos: f64,
}

/// The complete simulation state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub road: RoadNetwork,
    pub vehicles: BTreeMap<VehicleId, VehicleState>,
    pub sim_time: f64,
    /// Number of completed decision steps.
    pub frame: u32,
    pub horizon_s: f64,
    /// Vehicles involved in any collision so far.
    pub collided: BTreeSet<VehicleId>,
}

impl World {
    pub fn new(
        road: RoadNetwork,
        vehicles: Vec<VehicleState>,
        horizon_s: f64,
    ) -> Result<World, SimError> {
        if horizon_s.is_nan() || horizon_s <= 0.0 {
            return Err(SimError::InvalidWorld(format!(
                "horizon must be positive, got {horizon_s}"
            )));
        }
        let mut map = BTreeMap::new();
        for v in vehicles {
            let seg = road.segment(&v.segment).ok_or_else(|| {
                SimError::InvalidWorld(format!("{} sits on unknown segment {}", v.id, v.segment))
            })?;
            if v.lane_index >= seg.lane_count {
                return Err(SimError::InvalidWorld(format!(
                    "{} lane {} out of range for segment {} ({} lanes)",
                    v.id, v.lane_index, seg.id, seg.lane_count
                )));
            }
            if v.v < 0.0 || !v.v.is_finite() {
                return Err(SimError::InvalidWorld(format!(
                    "{} has invalid speed {}",
                    v.id, v.v
                )));
            }
            if map.insert(v.id, v).is_some() {
                return Err(SimError::InvalidWorld("duplicate vehicle id".into()));
            }
        }
        Ok(World {
            road,
            vehicles: map,
            sim_time: 0.0,
            frame: 0,
            horizon_s,
            collided: BTreeSet::new(),
        })
    }

    pub fn vehicle(&self, id: VehicleId) -> Result<&VehicleState, SimError> {
        self.vehicles.get(&id).ok_or(SimError::UnknownVehicle(id))
    }

    /// Ids of LLM-controlled agents, ascending.
    pub fn agent_ids(&self) -> Vec<VehicleId> {
        self.vehicles
            .values()
            .filter(|v| v.kind == VehicleKind::LlmAgent)
            .map(|v| v.id)
            .collect()
    }

    pub fn done(&self) -> bool {
        !self.collided.is_empty() || self.sim_time >= self.horizon_s - 1e-9
    }

    /// Frame coordinate (longitudinal) of a vehicle.
    pub fn frame_pos(&self, v: &VehicleState) -> f64 {
        self.road.seg(&v.segment).frame_pos(v.s)
    }

    /// Lateral coordinate of a vehicle within its frame, m.
    pub fn lateral_pos(&self, v: &VehicleState) -> f64 {
        let seg = self.road.seg(&v.segment);
        seg.slot(v.lane_index) as f64 * self.road.lane_width + v.lateral
    }

    /// Advance the world by one decision interval.
    ///
    /// `actions` must contain exactly one action per LLM agent and nothing
    /// else. On any validation error the world is left untouched.
    pub fn step(
        &mut self,
        actions: &BTreeMap<VehicleId, MetaAction>,
        dt: f64,
    ) -> Result<StepResult, SimError> {
        if self.done() {
            return Err(SimError::EpisodeOver(self.sim_time));
        }
        let substeps = dt / SUBSTEP_S;
        if dt.is_nan() || dt <= 0.0 || (substeps - substeps.round()).abs() > 1e-9 {
            return Err(SimError::BadDt(dt));
        }
        let substeps = substeps.round() as usize;
        for id in self.agent_ids() {
            if !actions.contains_key(&id) {
                return Err(SimError::MissingAction(id));
            }
        }
        for id in actions.keys() {
            let v = self.vehicle(*id)?;
            if v.kind != VehicleKind::LlmAgent {
                return Err(SimError::NotAnAgent(*id));
            }
        }

        let mut events = Vec::new();
        for (id, action) in actions {
            events.extend(apply_meta_action(self, *id, *action)?);
        }

        let mut collisions = Vec::new();
        for _ in 0..substeps {
            // Accelerations from the frozen start-of-substep state.
            let accel: BTreeMap<VehicleId, f64> = self
                .vehicles
                .values()
                .map(|v| (v.id, self.acceleration(v)))
                .collect();
            // Simultaneous integration: positions advance with old speeds.
            let mut moved: BTreeMap<VehicleId, f64> = BTreeMap::new();
            for v in self.vehicles.values_mut() {
                let ds = v.v * SUBSTEP_S;
                v.s += ds;
                v.segment_odometer += ds;
                v.v = (v.v + accel[&v.id] * SUBSTEP_S).max(0.0);
                moved.insert(v.id, ds);
            }
            self.advance_maneuvers(&mut events);
            self.apply_transitions(&moved, &mut events);
            self.sim_time += SUBSTEP_S;

            let found = detect_collisions(self);
            if !found.is_empty() {
                for &(a, b) in &found {
                    self.collided.insert(a);
                    self.collided.insert(b);
                    events.push(SimEvent::Collision { a, b, time: self.sim_time });
                }
                collisions = found;
                break;
            }
        }

        self.frame += 1;
        Ok(StepResult {
            collisions,
            events,
            done: self.done(),
            sim_time: self.sim_time,
        })
    }

    /// Longitudinal acceleration of a vehicle given the current world.
    fn acceleration(&self, v: &VehicleState) -> f64 {
        match v.kind {
            VehicleKind::LlmAgent => {
                (SPEED_GAIN * (v.target_speed - v.v)).clamp(-MAX_BRAKE, MAX_ACCEL)
            }
            VehicleKind::IdmBackground => {
                let (gap, v_leader) = self.idm_leader(v);
                idm_acceleration(v.v, gap, v_leader, &v.idm)
            }
        }
    }

    /// Bumper gap and speed of the vehicle an IDM follower should react to:
    /// the nearest leader in its own lane, or — when approaching a junction
    /// on its route — traffic on the receiving lane (which makes background
    /// vehicles yield before merging into a ring).
    fn idm_leader(&self, ego: &VehicleState) -> (f64, f64) {
        let seg = self.road.seg(&ego.segment);
        let period = seg.cyclic.then_some(seg.length);
        let mut best_gap = f64::INFINITY;
        let mut best_v = 0.0;
        let mut consider = |gap: f64, v: f64| {
            if gap < best_gap {
                best_gap = gap;
                best_v = v;
            }
        };

        for other in self.vehicles.values() {
            if other.id == ego.id
                || other.segment != ego.segment
                || other.lane_index != ego.lane_index
            {
                continue;
            }
            let delta = match period {
                Some(c) => forward_arc(ego.s, other.s, c),
                None => other.s - ego.s,
            };
            if delta <= 0.0 || delta > LEADER_LOOKAHEAD {
                continue;
            }
            consider(delta - (ego.length + other.length) / 2.0, other.v);
        }

        // Project the route across the next junction: the remaining distance
        // to the junction plus where traffic on the receiving lane sits
        // relative to it.
        if let Some(proj) = self.route_projection(ego) {
            if proj.remaining <= LEADER_LOOKAHEAD {
                let next_seg = self.road.seg(&proj.next);
                let next_period = next_seg.cyclic.then_some(next_seg.length);
                for other in self.vehicles.values() {
                    if other.segment != proj.next || other.lane_index != proj.landing_lane {
                        continue;
                    }
                    let delta = match next_period {
                        Some(c) => wrap_centered(other.s - proj.entry_pos, c),
                        None => other.s - proj.entry_pos,
                    };
                    if !(-JUNCTION_YIELD_BACK..=LEADER_LOOKAHEAD).contains(&delta) {
                        continue;
                    }
                    let gap = proj.remaining + delta - (ego.length + other.length) / 2.0;
                    consider(gap.max(0.05), other.v);
                }
            }
        }
        (best_gap, best_v)
    }

    /// Where a vehicle's route takes it next: distance left on the current
    /// segment and the landing point on the next one.
    pub(crate) fn route_projection(&self, ego: &VehicleState) -> Option<RouteProjection> {
        let next = ego.next_route_segment()?.clone();
        let seg = self.road.seg(&ego.segment);
        if seg.cyclic {
            let Junction::Exit { arc, .. } = self.road.exit_to(&ego.segment, &next)? else {
                return None;
            };
            Some(RouteProjection {
                remaining: forward_arc(ego.s.rem_euclid(seg.length), *arc, seg.length),
                next,
                landing_lane: 0,
                entry_pos: 0.0,
            })
        } else {
            let Junction::Continuation { to, entry_pos, landing_lane, .. } =
                self.road.continuation_from(&ego.segment)?
            else {
                return None;
            };
            if *to != next {
                return None;
            }
            Some(RouteProjection {
                remaining: seg.length - ego.s,
                next,
                landing_lane: *landing_lane,
                entry_pos: *entry_pos,
            })
        }
    }

    fn advance_maneuvers(&mut self, events: &mut Vec<SimEvent>) {
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for id in ids {
            let Some(mut m) = self.vehicles[&id].maneuver.clone() else { continue };
            m.progress += SUBSTEP_S / LANE_CHANGE_DURATION_S;
            let lane_width = self.road.lane_width;
            let v = self.vehicles.get_mut(&id).unwrap();
            if !m.rebased && m.progress >= 0.5 {
                // Re-register in the target lane; the lateral offset flips
                // sign because it is measured from the new lane center.
                let x = {
                    let from = self.road.seg(&v.segment);
                    from.frame_pos(v.s)
                };
                let target = self.road.seg(&m.target_segment);
                let new_s = if target.cyclic {
                    (x - target.origin).rem_euclid(target.length)
                } else {
                    x - target.origin
                };
                if v.segment != m.target_segment {
                    events.push(SimEvent::SegmentTransition {
                        id,
                        from: v.segment.clone(),
                        to: m.target_segment.clone(),
                    });
                    v.segment_odometer = 0.0;
                }
                v.segment = m.target_segment.clone();
                v.lane_index = m.target_lane;
                v.s = new_s;
                m.rebased = true;
            }
            if m.progress >= 1.0 - 1e-9 {
                v.lateral = 0.0;
                v.maneuver = None;
                events.push(SimEvent::LaneChangeCompleted {
                    id,
                    segment: v.segment.clone(),
                    lane: v.lane_index,
                });
            } else {
                v.lateral = if m.rebased {
                    -(m.slot_delta as f64) * lane_width * (1.0 - m.progress)
                } else {
                    m.slot_delta as f64 * lane_width * m.progress
                };
                v.maneuver = Some(m);
            }
        }
    }

    /// Move vehicles across continuation and exit junctions. `moved` holds
    /// each vehicle's longitudinal travel during the substep just applied.
    fn apply_transitions(
        &mut self,
        moved: &BTreeMap<VehicleId, f64>,
        events: &mut Vec<SimEvent>,
    ) {
        let ids: Vec<VehicleId> = self.vehicles.keys().copied().collect();
        for id in ids {
            let v = &self.vehicles[&id];
            if v.maneuver.is_some() {
                continue; // finish the lane change first
            }
            let seg = self.road.seg(&v.segment).clone();
            if !seg.cyclic && v.s >= seg.length {
                if let Some(Junction::Continuation { to, entry_pos, landing_lane, .. }) =
                    self.road.continuation_from(&seg.id).cloned()
                {
                    if v.next_route_segment() == Some(&to) {
                        let overshoot = v.s - seg.length;
                        let target = self.road.seg(&to).clone();
                        let v = self.vehicles.get_mut(&id).unwrap();
                        v.s = if target.cyclic {
                            (entry_pos + overshoot).rem_euclid(target.length)
                        } else {
                            entry_pos + overshoot
                        };
                        v.lane_index = landing_lane;
                        v.segment = to.clone();
                        v.segment_odometer = overshoot;
                        events.push(SimEvent::SegmentTransition {
                            id,
                            from: seg.id.clone(),
                            to,
                        });
                    }
                }
            } else if seg.cyclic {
                let Some(next) = v.next_route_segment().cloned() else { continue };
                let Some(Junction::Exit { arc, from_lane, .. }) =
                    self.road.exit_to(&seg.id, &next).cloned()
                else {
                    continue;
                };
                let ds = moved.get(&id).copied().unwrap_or(0.0);
                let pos_after = v.s.rem_euclid(seg.length);
                let dist_past = forward_arc(arc, pos_after, seg.length);
                // Crossed the exit arc during this substep, in the exit lane?
                if v.lane_index == from_lane && ds > 0.0 && dist_past < ds {
                    let v = self.vehicles.get_mut(&id).unwrap();
                    v.segment = next.clone();
                    v.lane_index = 0;
                    v.s = dist_past;
                    v.segment_odometer = dist_past;
                    events.push(SimEvent::SegmentTransition {
                        id,
                        from: seg.id.clone(),
                        to: next,
                    });
                } else {
                    // Keep ring positions wrapped; segment_odometer alone
                    // records laps.
                    self.vehicles.get_mut(&id).unwrap().s = pos_after;
                }
            }
        }
    }
}

/// Apply one meta-action to an agent vehicle, returning any diagnostic
/// events. Accelerate/Decelerate nudge the target speed by
/// [`TARGET_SPEED_STEP`] within `[0, MAX_TARGET_SPEED]`; TurnLeft/TurnRight
/// begin a lane change toward the adjacent lane (downgraded to Idle with an
/// event when none exists or one is already running); Idle keeps the
/// current target.
pub fn apply_meta_action(
    world: &mut World,
    id: VehicleId,
    action: MetaAction,
) -> Result<Vec<SimEvent>, SimError> {
    let v = world.vehicle(id)?;
    if v.kind != VehicleKind::LlmAgent {
        return Err(SimError::NotAnAgent(id));
    }
    let mut events = Vec::new();
    match action {
        MetaAction::Idle => {}
        MetaAction::Accelerate => {
            let v = world.vehicles.get_mut(&id).unwrap();
            v.target_speed = (v.target_speed + TARGET_SPEED_STEP).min(MAX_TARGET_SPEED);
        }
        MetaAction::Decelerate => {
            let v = world.vehicles.get_mut(&id).unwrap();
            v.target_speed = (v.target_speed - TARGET_SPEED_STEP).max(0.0);
        }
        MetaAction::TurnLeft | MetaAction::TurnRight => {
            let side = if action == MetaAction::TurnLeft {
                LaneSide::Left
            } else {
                LaneSide::Right
            };
            if v.maneuver.is_some() {
                events.push(SimEvent::InfeasibleLaneChange { id, action });
                return Ok(events);
            }
            match world.road.adjacent_lane(&v.segment, v.lane_index, v.s, side) {
                Some((seg, lane)) => {
                    let v = world.vehicles.get_mut(&id).unwrap();
                    v.maneuver = Some(LaneChange {
                        target_segment: seg,
                        target_lane: lane,
                        slot_delta: side.slot_delta(),
                        progress: 0.0,
                        rebased: false,
                    });
                }
                None => events.push(SimEvent::InfeasibleLaneChange { id, action }),
            }
        }
    }
    Ok(events)
}

/// All currently overlapping vehicle pairs (ids ascending within a pair,
/// pairs sorted). Two vehicles collide when their rectangles strictly
/// overlap in both axes of a shared frame; touching exactly at the boundary
/// does not count.
pub fn detect_collisions(world: &World) -> Vec<(VehicleId, VehicleId)> {
    let vs: Vec<&VehicleState> = world.vehicles.values().collect();
    let mut out = Vec::new();
    for i in 0..vs.len() {
        for j in (i + 1)..vs.len() {
            let (a, b) = (vs[i], vs[j]);
            let seg_a = world.road.seg(&a.segment);
            let seg_b = world.road.seg(&b.segment);
            if seg_a.frame != seg_b.frame {
                continue;
            }
            let xa = seg_a.frame_pos(a.s);
            let xb = seg_b.frame_pos(b.s);
            let dx = match world.road.frame_period(seg_a.frame) {
                Some(c) => wrap_centered(xb - xa, c),
                None => xb - xa,
            };
            let dy = world.lateral_pos(b) - world.lateral_pos(a);
            if dx.abs() < (a.length + b.length) / 2.0
                && dy.abs() < (a.width + b.width) / 2.0
            {
                out.push((a.id, b.id));
            }
        }
    }
    out
}

/// Minimum time to collision for `ego` against leaders in its own lane and
/// (mid-lane-change) its target lane. A leader counts only when ego is
/// closing on it; otherwise contributes infinity. An overlapping, closing
/// leader yields 0.
pub fn compute_ttc(world: &World, ego: VehicleId) -> Result<Ttc, SimError> {
    let e = world.vehicle(ego)?;
    let mut lanes: Vec<(SegmentId, usize)> = vec![(e.segment.clone(), e.lane_index)];
    if let Some(m) = &e.maneuver {
        let t = (m.target_segment.clone(), m.target_lane);
        if !lanes.contains(&t) {
            lanes.push(t);
        }
    }
    let mut best = f64::INFINITY;
    for (seg_id, lane) in lanes {
        let seg = world.road.seg(&seg_id);
        let period = seg.cyclic.then_some(seg.length);
        let ego_x = world.frame_pos(e);
        for other in world.vehicles.values() {
            if other.id == ego || other.segment != seg_id || other.lane_index != lane {
                continue;
            }
            let other_x = world.road.seg(&other.segment).frame_pos(other.s);
            let delta = match period {
                Some(c) => forward_arc(ego_x, other_x, c),
                None => other_x - ego_x,
            };
            if delta <= 0.0 {
                continue;
            }
            let closing = e.v - other.v;
            if closing <= 0.0 {
                continue;
            }
            let gap = (delta - (e.length + other.length) / 2.0).max(0.0);
            best = best.min(gap / closing);
        }
    }
    Ok(Ttc(best))
}
