//! Reproducible traffic scenarios: a highway on-ramp merge and a two-lane
//! roundabout.
//!
//! Both builders place vehicles at fixed anchor points disturbed by
//! seed-driven uniform noise, so one seed always yields one spawn layout.
//! Same-lane vehicles are placed as a chain — each follower sits
//! `spacing + noise` behind its predecessor — which keeps every initial
//! bumper gap inside `spacing + noise_range` by construction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::road::{Junction, NetworkKind, RoadNetwork, Segment, SegmentId, LANE_WIDTH};
use crate::sim::{
    IdmParams, VehicleId, VehicleKind, VehicleState, World, SUBSTEP_S, VEHICLE_LENGTH,
    VEHICLE_WIDTH,
};

/// Frame x-coordinate where the on-ramp meets the main road.
pub const MERGE_X: f64 = 160.0;
/// Frame x-coordinate of the main road's start.
pub const MAIN_ORIGIN_X: f64 = -240.0;
pub const MAIN_LENGTH: f64 = 700.0;
/// Agents succeed once they are this far past the merge point.
pub const ENDPOINT_AFTER_MERGE: f64 = 250.0;
/// Spawn anchor (frame x) of the main-road agent.
pub const MAIN_AGENT_ANCHOR_X: f64 = 80.0;
/// Spawn anchor (frame x) of lane chains without an agent at their head.
pub const IDM_HEAD_ANCHOR_X: f64 = 100.0;
/// Spawn anchor of the ramp agent, local to the ramp.
pub const RAMP_AGENT_ANCHOR_S: f64 = 20.0;

/// Roundabout inner-ring radius, m.
pub const RING_RADIUS: f64 = 30.0;
/// Length of each entry/exit road, m.
pub const APPROACH_ROAD_LENGTH: f64 = 160.0;
/// Spawn anchor of the roundabout agent on the southern entry.
pub const SOUTH_AGENT_ANCHOR_S: f64 = 130.0;
/// Spawn anchor of the western platoon's head.
pub const WEST_HEAD_ANCHOR_S: f64 = 140.0;

const SPAWN_ATTEMPTS: usize = 100;

/// Ring centerline circumference used for arc positions.
pub fn ring_circumference() -> f64 {
    2.0 * std::f64::consts::PI * RING_RADIUS
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    RampMerge,
    Roundabout,
}

/// Everything needed to build a scenario deterministically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub main_lanes: usize,
    pub ramp_lanes: usize,
    pub ramp_length: f64,
    /// Initial (and desired) speeds are drawn uniformly from this range, m/s.
    pub speed_range: [f64; 2],
    /// Nominal bumper-to-anchor spacing between chained vehicles, m.
    pub spawn_spacing: f64,
    /// Uniform noise added to every spawn anchor/gap, m.
    pub spawn_noise: [f64; 2],
    pub n_llm: usize,
    pub n_idm: usize,
    /// Decisions per simulated second; the decision interval is its inverse.
    pub policy_frequency: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            kind: ScenarioKind::RampMerge,
            main_lanes: 2,
            ramp_lanes: 1,
            ramp_length: 120.0,
            speed_range: [20.0, 25.0],
            spawn_spacing: 40.0,
            spawn_noise: [-10.0, 10.0],
            n_llm: 2,
            n_idm: 5,
            policy_frequency: 2.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn ramp_merge(seed: u64) -> Self {
        ScenarioConfig { seed, ..ScenarioConfig::default() }
    }

    pub fn roundabout(seed: u64) -> Self {
        ScenarioConfig {
            kind: ScenarioKind::Roundabout,
            n_llm: 1,
            n_idm: 5,
            seed,
            ..ScenarioConfig::default()
        }
    }

    /// Decision interval implied by the policy frequency, seconds.
    pub fn dt(&self) -> f64 {
        1.0 / self.policy_frequency
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidConfig(msg));
        if self.policy_frequency.is_nan() || self.policy_frequency <= 0.0 {
            return bad(format!("policy_frequency must be positive, got {}", self.policy_frequency));
        }
        let substeps = self.dt() / SUBSTEP_S;
        if (substeps - substeps.round()).abs() > 1e-9 || substeps < 0.5 {
            return bad(format!(
                "decision interval 1/{} s is not a multiple of the {} s substep",
                self.policy_frequency, SUBSTEP_S
            ));
        }
        let [lo, hi] = self.speed_range;
        if lo.is_nan() || hi.is_nan() || lo < 0.0 || hi < lo {
            return bad(format!("speed_range [{lo}, {hi}] is not an ordered non-negative range"));
        }
        let [nlo, nhi] = self.spawn_noise;
        if nlo > nhi {
            return bad(format!("spawn_noise [{nlo}, {nhi}] is inverted"));
        }
        let gap_floor = self.spawn_spacing + nlo;
        if gap_floor.is_nan() || gap_floor <= VEHICLE_LENGTH {
            return bad(format!(
                "spawn_spacing {} with noise floor {} cannot keep {} m vehicles apart",
                self.spawn_spacing, nlo, VEHICLE_LENGTH
            ));
        }
        match self.kind {
            ScenarioKind::RampMerge => {
                if self.ramp_lanes != 1 {
                    return Err(ScenarioError::Unsupported(format!(
                        "only single-lane ramps are supported, got {}",
                        self.ramp_lanes
                    )));
                }
                if !(1..=4).contains(&self.main_lanes) {
                    return bad(format!("main_lanes must be 1..=4, got {}", self.main_lanes));
                }
                if !(20.0..=380.0).contains(&self.ramp_length) {
                    return bad(format!("ramp_length {} outside supported 20..=380 m", self.ramp_length));
                }
                if self.n_llm != 2 {
                    return bad(format!(
                        "the merge scenario drives one main-road and one ramp agent (n_llm = 2), got {}",
                        self.n_llm
                    ));
                }
            }
            ScenarioKind::Roundabout => {
                if self.n_llm != 1 || self.n_idm != 5 {
                    return bad(format!(
                        "the roundabout scenario is fixed at 1 agent + 5 background vehicles, got {} + {}",
                        self.n_llm, self.n_idm
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    InvalidConfig(String),
    #[error("unsupported scenario: {0}")]
    Unsupported(String),
    #[error("could not place vehicles without overlap after {attempts} attempts")]
    SpawnCongestion { attempts: usize },
}

/// Terminal judgement of an episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ongoing,
    Success,
    CollisionFailure,
    TimeoutFailure,
}

impl Outcome {
    pub fn is_terminal(self) -> bool {
        self != Outcome::Ongoing
    }
}

/// Build the road network and spawn list for a configuration.
pub fn build(cfg: &ScenarioConfig) -> Result<(RoadNetwork, Vec<VehicleState>), ScenarioError> {
    cfg.validate()?;
    match cfg.kind {
        ScenarioKind::RampMerge => build_ramp_merge(cfg),
        ScenarioKind::Roundabout => build_roundabout(cfg),
    }
}

/// Convenience: build a scenario and wrap it in a ready-to-step world.
pub fn build_world(cfg: &ScenarioConfig, horizon_s: f64) -> Result<World, ScenarioError> {
    let (road, vehicles) = build(cfg)?;
    World::new(road, vehicles, horizon_s)
        .map_err(|e| ScenarioError::InvalidConfig(e.to_string()))
}

fn ramp_network(cfg: &ScenarioConfig) -> RoadNetwork {
    RoadNetwork {
        kind: NetworkKind::RampMerge,
        segments: vec![
            Segment {
                id: "main".into(),
                length: MAIN_LENGTH,
                lane_count: cfg.main_lanes,
                frame: 0,
                origin: MAIN_ORIGIN_X,
                base_slot: 0,
                cyclic: false,
            },
            Segment {
                id: "ramp".into(),
                length: cfg.ramp_length,
                lane_count: cfg.ramp_lanes,
                frame: 0,
                origin: MERGE_X - cfg.ramp_length,
                base_slot: cfg.main_lanes as i32,
                cyclic: false,
            },
        ],
        junctions: vec![],
        lane_width: LANE_WIDTH,
        merge_pos: Some(MERGE_X),
        endpoint_pos: Some(MERGE_X + ENDPOINT_AFTER_MERGE),
    }
}

fn vehicle(
    id: u32,
    kind: VehicleKind,
    segment: &str,
    lane: usize,
    s: f64,
    speed: f64,
    route: Vec<SegmentId>,
) -> VehicleState {
    VehicleState {
        id: VehicleId(id),
        kind,
        segment: segment.into(),
        lane_index: lane,
        s,
        lateral: 0.0,
        v: speed,
        target_speed: speed,
        length: VEHICLE_LENGTH,
        width: VEHICLE_WIDTH,
        route,
        maneuver: None,
        segment_odometer: 0.0,
        idm: IdmParams { v0: speed.max(0.1), ..IdmParams::default() },
    }
}

fn build_ramp_merge(cfg: &ScenarioConfig) -> Result<(RoadNetwork, Vec<VehicleState>), ScenarioError> {
    let road = ramp_network(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [nlo, nhi] = cfg.spawn_noise;
    let [vlo, vhi] = cfg.speed_range;
    let llm_lane = cfg.main_lanes - 1;

    // Chain membership per main lane: the main agent (vehicle 0) heads the
    // rightmost lane; background vehicle k (id k+2) joins lane k % main_lanes.
    let mut chains: Vec<Vec<u32>> = vec![Vec::new(); cfg.main_lanes];
    chains[llm_lane].push(0);
    for k in 0..cfg.n_idm {
        chains[k % cfg.main_lanes].push(k as u32 + 2);
    }

    for attempt in 0..SPAWN_ATTEMPTS {
        let noise = |rng: &mut ChaCha8Rng| {
            if nlo == nhi { nlo } else { rng.random_range(nlo..=nhi) }
        };
        // Positions first (lane by lane, head to tail), then the ramp agent,
        // then all speeds in vehicle-id order: one fixed draw sequence.
        let mut placed: Vec<(u32, VehicleKind, usize, f64)> = Vec::new(); // (id, kind, lane, frame x)
        for (lane, chain) in chains.iter().enumerate() {
            let anchor = if lane == llm_lane { MAIN_AGENT_ANCHOR_X } else { IDM_HEAD_ANCHOR_X };
            let mut x = anchor + noise(&mut rng);
            for (i, &id) in chain.iter().enumerate() {
                if i > 0 {
                    x -= cfg.spawn_spacing + noise(&mut rng);
                }
                let kind = if id == 0 { VehicleKind::LlmAgent } else { VehicleKind::IdmBackground };
                placed.push((id, kind, lane, x));
            }
        }
        let ramp_s = RAMP_AGENT_ANCHOR_S + noise(&mut rng);

        let mut vehicles: Vec<VehicleState> = Vec::new();
        for &(id, kind, lane, x) in &placed {
            vehicles.push(vehicle(id, kind, "main", lane, x - MAIN_ORIGIN_X, 0.0, vec!["main".into()]));
        }
        vehicles.push(vehicle(
            1,
            VehicleKind::LlmAgent,
            "ramp",
            0,
            ramp_s,
            0.0,
            vec!["ramp".into(), "main".into()],
        ));
        vehicles.sort_by_key(|v| v.id);
        for v in vehicles.iter_mut() {
            let speed = if vlo == vhi { vlo } else { rng.random_range(vlo..=vhi) };
            v.v = speed;
            v.target_speed = speed;
            v.idm.v0 = speed.max(0.1);
        }

        if spawn_is_valid(&road, &vehicles) {
            return Ok((road, vehicles));
        }
        let _ = attempt;
    }
    Err(ScenarioError::SpawnCongestion { attempts: SPAWN_ATTEMPTS })
}

fn roundabout_network() -> RoadNetwork {
    let c = ring_circumference();
    let mut segments = vec![Segment {
        id: "ring".into(),
        length: c,
        lane_count: 2,
        frame: 0,
        origin: 0.0,
        base_slot: 0, // lane 0 inner, lane 1 outer
        cyclic: true,
    }];
    let mut junctions = Vec::new();
    // Counterclockwise arc positions of the four junctions.
    let arcs = [("south", 0.0), ("east", c / 4.0), ("north", c / 2.0), ("west", 3.0 * c / 4.0)];
    for (i, (name, arc)) in arcs.iter().enumerate() {
        let entry: SegmentId = format!("entry_{name}").as_str().into();
        let exit: SegmentId = format!("exit_{name}").as_str().into();
        segments.push(Segment {
            id: entry.clone(),
            length: APPROACH_ROAD_LENGTH,
            lane_count: 1,
            frame: 1 + 2 * i,
            origin: 0.0,
            base_slot: 0,
            cyclic: false,
        });
        segments.push(Segment {
            id: exit.clone(),
            length: APPROACH_ROAD_LENGTH,
            lane_count: 1,
            frame: 2 + 2 * i,
            origin: 0.0,
            base_slot: 0,
            cyclic: false,
        });
        junctions.push(Junction::Continuation {
            from: entry,
            to: "ring".into(),
            entry_pos: *arc,
            landing_lane: 1,
        });
        junctions.push(Junction::Exit {
            from: "ring".into(),
            arc: *arc,
            to: exit,
            from_lane: 1,
        });
    }
    RoadNetwork {
        kind: NetworkKind::Roundabout,
        segments,
        junctions,
        lane_width: LANE_WIDTH,
        merge_pos: None,
        endpoint_pos: None,
    }
}

fn build_roundabout(cfg: &ScenarioConfig) -> Result<(RoadNetwork, Vec<VehicleState>), ScenarioError> {
    let road = roundabout_network();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let [nlo, nhi] = cfg.spawn_noise;
    let [vlo, vhi] = cfg.speed_range;
    let through_route: Vec<SegmentId> =
        vec!["entry_south".into(), "ring".into(), "exit_east".into()];
    let west_route: Vec<SegmentId> =
        vec!["entry_west".into(), "ring".into(), "exit_east".into()];

    for _ in 0..SPAWN_ATTEMPTS {
        let noise = |rng: &mut ChaCha8Rng| {
            if nlo == nhi { nlo } else { rng.random_range(nlo..=nhi) }
        };
        // South chain: the agent plus one follower.
        let agent_s = SOUTH_AGENT_ANCHOR_S + noise(&mut rng);
        let follower_s = agent_s - (cfg.spawn_spacing + noise(&mut rng));
        // Western platoon of four, head first.
        let mut west = Vec::with_capacity(4);
        let mut x = WEST_HEAD_ANCHOR_S + noise(&mut rng);
        for i in 0..4 {
            if i > 0 {
                x -= cfg.spawn_spacing + noise(&mut rng);
            }
            west.push(x);
        }

        let mut vehicles = vec![
            vehicle(0, VehicleKind::LlmAgent, "entry_south", 0, agent_s, 0.0, through_route.clone()),
            vehicle(1, VehicleKind::IdmBackground, "entry_south", 0, follower_s, 0.0, through_route.clone()),
        ];
        for (i, &s) in west.iter().enumerate() {
            vehicles.push(vehicle(
                2 + i as u32,
                VehicleKind::IdmBackground,
                "entry_west",
                0,
                s,
                0.0,
                west_route.clone(),
            ));
        }
        for v in vehicles.iter_mut() {
            let speed = if vlo == vhi { vlo } else { rng.random_range(vlo..=vhi) };
            v.v = speed;
            v.target_speed = speed;
            v.idm.v0 = speed.max(0.1);
        }

        if spawn_is_valid(&road, &vehicles) {
            return Ok((road, vehicles));
        }
    }
    Err(ScenarioError::SpawnCongestion { attempts: SPAWN_ATTEMPTS })
}

/// All vehicles on their segments (with room behind s=0 tolerated as an
/// error) and no two overlapping.
fn spawn_is_valid(road: &RoadNetwork, vehicles: &[VehicleState]) -> bool {
    for v in vehicles {
        let seg = match road.segment(&v.segment) {
            Some(s) => s,
            None => return false,
        };
        if !seg.cyclic && (v.s < 0.0 || v.s > seg.length) {
            return false;
        }
    }
    match World::new(road.clone(), vehicles.to_vec(), 1.0) {
        Ok(w) => crate::sim::detect_collisions(&w).is_empty(),
        Err(_) => false,
    }
}

/// Judge the current world against the scenario's terminal conditions.
/// Collisions dominate; success requires *every* agent to have met its
/// goal; otherwise running out of ramp, missing the roundabout exit for a
/// full lap, or exhausting the horizon is a timeout failure.
pub fn judge_outcome(world: &World, cfg: &ScenarioConfig) -> Outcome {
    if !world.collided.is_empty() {
        return Outcome::CollisionFailure;
    }
    let agents: Vec<&VehicleState> = world
        .vehicles
        .values()
        .filter(|v| v.kind == VehicleKind::LlmAgent)
        .collect();
    match cfg.kind {
        ScenarioKind::RampMerge => {
            let ramp_len = world
                .road
                .segment(&"ramp".into())
                .map(|s| s.length)
                .unwrap_or(cfg.ramp_length);
            for a in &agents {
                if a.segment.as_str() == "ramp" && a.maneuver.is_none() && a.s >= ramp_len {
                    return Outcome::TimeoutFailure;
                }
            }
            let endpoint = world.road.endpoint_pos.unwrap_or(MERGE_X + ENDPOINT_AFTER_MERGE);
            if !agents.is_empty()
                && agents.iter().all(|a| {
                    a.segment.as_str() != "ramp" && world.frame_pos(a) >= endpoint
                })
            {
                return Outcome::Success;
            }
        }
        ScenarioKind::Roundabout => {
            let c = ring_circumference();
            let all_done = !agents.is_empty()
                && agents.iter().all(|a| {
                    a.route.len() >= 3 && Some(&a.segment) == a.route.last()
                });
            if all_done {
                return Outcome::Success;
            }
            for a in &agents {
                if a.segment.as_str() != "ring" || a.route.len() < 3 {
                    continue;
                }
                let entry_arc = match world.road.continuation_from(&a.route[0]) {
                    Some(Junction::Continuation { entry_pos, .. }) => *entry_pos,
                    _ => continue,
                };
                let exit_arc = match world.road.exit_to(&a.route[1], &a.route[2]) {
                    Some(Junction::Exit { arc, .. }) => *arc,
                    _ => continue,
                };
                let allowed = crate::road::forward_arc(entry_arc, exit_arc, c) + c;
                if a.segment_odometer > allowed {
                    // A full lap past the intended exit: the agent missed it
                    // twice over.
                    return Outcome::TimeoutFailure;
                }
            }
        }
    }
    if world.sim_time >= world.horizon_s - 1e-9 {
        return Outcome::TimeoutFailure;
    }
    Outcome::Ongoing
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn default_merge_scenario_matches_contract() {
        let cfg = ScenarioConfig::ramp_merge(7);
        let (road, vehicles) = build(&cfg).unwrap();
        assert_eq!(vehicles.len(), 7);
        let agents: Vec<_> = vehicles.iter().filter(|v| v.kind == VehicleKind::LlmAgent).collect();
        assert_eq!(agents.len(), 2);
        assert_eq!(agents[0].id, VehicleId(0));
        assert_eq!(agents[0].segment.as_str(), "main");
        assert_eq!(agents[0].lane_index, 1, "main agent spawns in the rightmost main lane");
        assert_eq!(agents[1].id, VehicleId(1));
        assert_eq!(agents[1].segment.as_str(), "ramp");
        assert_eq!(agents[1].route.last().unwrap().as_str(), "main");

        let ramp = road.segment(&"ramp".into()).unwrap();
        assert_eq!(ramp.length, 120.0);
        assert_eq!(ramp.origin, 40.0);
        assert_eq!(road.segment(&"main".into()).unwrap().lane_count, 2);
        assert_eq!(road.merge_pos, Some(160.0));
        assert_eq!(road.endpoint_pos, Some(410.0));

        for v in &vehicles {
            assert!(v.v >= 20.0 && v.v <= 25.0, "{}: speed {}", v.id, v.v);
            assert_eq!(v.target_speed, v.v);
        }
        // Ramp agent within 20 +/- 10 m of its anchor.
        let ramp_agent = &agents[1];
        assert!((10.0..=30.0).contains(&ramp_agent.s), "ramp s = {}", ramp_agent.s);

        // Same-lane gaps stay within spacing +/- noise.
        let mut by_lane: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for v in vehicles.iter().filter(|v| v.segment.as_str() == "main") {
            by_lane.entry(v.lane_index).or_default().push(v.s);
        }
        for (_, mut xs) in by_lane {
            xs.sort_by(f64::total_cmp);
            for pair in xs.windows(2) {
                let gap = pair[1] - pair[0];
                assert!((30.0..=50.0).contains(&gap), "center gap {gap} outside [30, 50]");
            }
        }
    }

    #[test]
    fn spawns_are_deterministic_per_seed_and_vary_across_seeds() {
        let a = build(&ScenarioConfig::ramp_merge(42)).unwrap();
        let b = build(&ScenarioConfig::ramp_merge(42)).unwrap();
        assert_eq!(a, b);
        let layouts: Vec<String> = (0..10)
            .map(|s| {
                serde_json::to_string(&build(&ScenarioConfig::ramp_merge(s)).unwrap().1).unwrap()
            })
            .collect();
        let distinct: std::collections::BTreeSet<&String> = layouts.iter().collect();
        assert!(distinct.len() > 5, "seeds should vary layouts, got {} distinct", distinct.len());
    }

    #[test]
    fn zero_noise_places_vehicles_exactly_on_anchors() {
        let cfg = ScenarioConfig {
            spawn_noise: [0.0, 0.0],
            speed_range: [22.0, 22.0],
            ..ScenarioConfig::ramp_merge(0)
        };
        let (road, vehicles) = build(&cfg).unwrap();
        let x = |v: &VehicleState| road.seg(&v.segment).frame_pos(v.s);
        let find = |id: u32| vehicles.iter().find(|v| v.id == VehicleId(id)).unwrap();
        // Lane 1 chain: agent at 80, then v3 at 40, v5 at 0.
        assert_eq!(x(find(0)), 80.0);
        assert_eq!(x(find(3)), 40.0);
        assert_eq!(x(find(5)), 0.0);
        // Lane 0 chain: v2 at 100, v4 at 60, v6 at 20.
        assert_eq!(x(find(2)), 100.0);
        assert_eq!(x(find(4)), 60.0);
        assert_eq!(x(find(6)), 20.0);
        // Ramp agent at local 20 => frame x 60.
        assert_eq!(x(find(1)), 60.0);
        assert!(vehicles.iter().all(|v| v.v == 22.0));
    }

    #[test]
    fn single_lane_main_road_fits_the_whole_chain() {
        let cfg = ScenarioConfig { main_lanes: 1, ..ScenarioConfig::ramp_merge(3) };
        let (road, vehicles) = build(&cfg).unwrap();
        assert_eq!(road.segment(&"main".into()).unwrap().lane_count, 1);
        assert!(vehicles
            .iter()
            .filter(|v| v.segment.as_str() == "main")
            .all(|v| v.lane_index == 0));
        assert_eq!(vehicles.len(), 7);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad_freq = ScenarioConfig { policy_frequency: 3.0, ..ScenarioConfig::ramp_merge(0) };
        assert!(matches!(build(&bad_freq), Err(ScenarioError::InvalidConfig(_))));
        let bad_ramp = ScenarioConfig { ramp_lanes: 2, ..ScenarioConfig::ramp_merge(0) };
        assert!(matches!(build(&bad_ramp), Err(ScenarioError::Unsupported(_))));
        let bad_speeds = ScenarioConfig { speed_range: [25.0, 20.0], ..ScenarioConfig::ramp_merge(0) };
        assert!(matches!(build(&bad_speeds), Err(ScenarioError::InvalidConfig(_))));
        let bad_spacing = ScenarioConfig {
            spawn_spacing: 8.0,
            ..ScenarioConfig::ramp_merge(0)
        };
        assert!(matches!(build(&bad_spacing), Err(ScenarioError::InvalidConfig(_))));
    }

    #[test]
    fn roundabout_casting_matches_contract() {
        let cfg = ScenarioConfig::roundabout(5);
        let (road, vehicles) = build(&cfg).unwrap();
        assert_eq!(vehicles.len(), 6);
        let ring = road.segment(&"ring".into()).unwrap();
        assert!(ring.cyclic);
        assert_eq!(ring.lane_count, 2);
        assert!((ring.length - 2.0 * std::f64::consts::PI * 30.0).abs() < 1e-9);
        for name in ["entry_south", "entry_west", "entry_north", "entry_east", "exit_south", "exit_west", "exit_north", "exit_east"] {
            let seg = road.segment(&name.into()).unwrap();
            assert_eq!(seg.lane_count, 1, "{name} must be single-lane");
        }
        let agent = &vehicles[0];
        assert_eq!(agent.kind, VehicleKind::LlmAgent);
        assert_eq!(agent.segment.as_str(), "entry_south");
        assert_eq!(
            agent.route.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            vec!["entry_south", "ring", "exit_east"]
        );
        assert_eq!(vehicles[1].segment.as_str(), "entry_south");
        assert!(vehicles[1].s < agent.s, "follower spawns behind the agent");
        for v in &vehicles[2..] {
            assert_eq!(v.kind, VehicleKind::IdmBackground);
            assert_eq!(v.segment.as_str(), "entry_west");
            assert_eq!(v.route.last().unwrap().as_str(), "exit_east");
        }
    }

    #[test]
    fn judge_merge_outcomes() {
        let cfg = ScenarioConfig { spawn_noise: [0.0, 0.0], ..ScenarioConfig::ramp_merge(0) };
        let mut w = build_world(&cfg, 30.0).unwrap();
        assert_eq!(judge_outcome(&w, &cfg), Outcome::Ongoing);

        // Both agents past the endpoint and off the ramp: success.
        let mut success = w.clone();
        for id in [0, 1] {
            let v = success.vehicles.get_mut(&VehicleId(id)).unwrap();
            v.segment = "main".into();
            v.lane_index = 1;
            v.s = 700.0 - 20.0 + id as f64 * 10.0; // frame x 420 / 430
        }
        assert_eq!(judge_outcome(&success, &cfg), Outcome::Success);

        // Ramp agent pushed past the ramp's end without merging: timeout.
        let mut overshoot = w.clone();
        overshoot.vehicles.get_mut(&VehicleId(1)).unwrap().s = 121.0;
        assert_eq!(judge_outcome(&overshoot, &cfg), Outcome::TimeoutFailure);

        // Collision dominates everything else.
        let mut collided = success.clone();
        collided.collided.insert(VehicleId(2));
        collided.collided.insert(VehicleId(4));
        assert_eq!(judge_outcome(&collided, &cfg), Outcome::CollisionFailure);

        // Horizon exhausted.
        w.sim_time = 30.0;
        assert_eq!(judge_outcome(&w, &cfg), Outcome::TimeoutFailure);
    }

    #[test]
    fn judge_roundabout_outcomes() {
        let cfg = ScenarioConfig::roundabout(1);
        let w = build_world(&cfg, 30.0).unwrap();
        assert_eq!(judge_outcome(&w, &cfg), Outcome::Ongoing);

        let mut success = w.clone();
        {
            let a = success.vehicles.get_mut(&VehicleId(0)).unwrap();
            a.segment = "exit_east".into();
            a.s = 5.0;
        }
        assert_eq!(judge_outcome(&success, &cfg), Outcome::Success);

        // On the ring with more than entry->exit arc + one lap on the odometer.
        let mut missed = w.clone();
        {
            let a = missed.vehicles.get_mut(&VehicleId(0)).unwrap();
            a.segment = "ring".into();
            a.lane_index = 1;
            a.s = 10.0;
            a.segment_odometer = ring_circumference() * 1.3;
        }
        assert_eq!(judge_outcome(&missed, &cfg), Outcome::TimeoutFailure);

        // Still lapping within the allowance: ongoing.
        let mut looping = w.clone();
        {
            let a = looping.vehicles.get_mut(&VehicleId(0)).unwrap();
            a.segment = "ring".into();
            a.lane_index = 1;
            a.s = 10.0;
            a.segment_odometer = ring_circumference() * 0.8;
        }
        assert_eq!(judge_outcome(&looping, &cfg), Outcome::Ongoing);
    }

    #[test]
    fn west_platoon_yields_before_entering_occupied_ring() {
        // Drop an agent-free variant: run the roundabout world forward with
        // only background vehicles by replacing the agent with a background
        // clone, and check nobody collides at the junctions.
        let cfg = ScenarioConfig::roundabout(9);
        let mut w = build_world(&cfg, 30.0).unwrap();
        let agent = w.vehicles.get_mut(&VehicleId(0)).unwrap();
        agent.kind = VehicleKind::IdmBackground;
        let empty = BTreeMap::new();
        for _ in 0..60 {
            if w.done() {
                break;
            }
            w.step(&empty, 0.5).unwrap();
        }
        assert!(w.collided.is_empty(), "background traffic should negotiate the ring safely");
    }
}
