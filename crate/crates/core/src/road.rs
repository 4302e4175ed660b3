//! Lane-based road networks.
//!
//! A network is a set of [`Segment`]s. Each segment carries one or more
//! parallel lanes and lives in a *frame*: a shared longitudinal axis on
//! which positions from different segments are directly comparable. The
//! highway main road and its on-ramp share one frame (the ramp runs
//! alongside the rightmost main lane), while a roundabout's ring and each
//! of its entry/exit roads are separate frames connected by junctions.
//!
//! Within a frame every lane occupies an integer *slot*; lateral position
//! in meters is `slot * lane_width` plus any in-progress lane-change
//! offset. Cyclic segments (the ring) wrap longitudinally at their length.

use serde::{Deserialize, Serialize};

/// Lane width shared by every network, in meters.
pub const LANE_WIDTH: f64 = 4.0;

/// Identifier of a road segment, unique within a network.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SegmentId(pub String);

impl SegmentId {
    pub fn new(name: &str) -> Self {
        SegmentId(name.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for SegmentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SegmentId {
    fn from(s: &str) -> Self {
        SegmentId::new(s)
    }
}

/// One stretch of road with `lane_count` parallel lanes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: SegmentId,
    /// Longitudinal extent in meters; positions on the segment are `0..=length`
    /// (cyclic segments wrap modulo `length`).
    pub length: f64,
    pub lane_count: usize,
    /// Frame this segment shares its longitudinal axis with.
    pub frame: usize,
    /// Frame coordinate of the segment's `s = 0`.
    pub origin: f64,
    /// Lateral slot of the segment's lane 0 within the frame. Higher lane
    /// indices sit at higher slots (further right on straight roads,
    /// further outward on the ring).
    pub base_slot: i32,
    pub cyclic: bool,
}

impl Segment {
    /// Frame coordinate of a longitudinal position on this segment.
    pub fn frame_pos(&self, s: f64) -> f64 {
        if self.cyclic {
            self.origin + s.rem_euclid(self.length)
        } else {
            self.origin + s
        }
    }

    /// Lateral slot of one of this segment's lanes.
    pub fn slot(&self, lane: usize) -> i32 {
        self.base_slot + lane as i32
    }
}

/// Connection between two segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Junction {
    /// Traffic leaving `from`'s far end (`s = from.length`) continues on
    /// `to`, landing in `landing_lane` at position `entry_pos`.
    Continuation {
        from: SegmentId,
        to: SegmentId,
        entry_pos: f64,
        landing_lane: usize,
    },
    /// Traffic on cyclic segment `from`, lane `from_lane`, may leave at
    /// arc position `arc` onto `to` (entering at `to`'s `s = 0`).
    Exit {
        from: SegmentId,
        arc: f64,
        to: SegmentId,
        from_lane: usize,
    },
}

/// Which side a lane change moves toward. `Left` is toward lower slots,
/// `Right` toward higher slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneSide {
    Left,
    Right,
}

impl LaneSide {
    pub fn slot_delta(self) -> i32 {
        match self {
            LaneSide::Left => -1,
            LaneSide::Right => 1,
        }
    }
}

/// What kind of network this is; used by scenario judging and rendering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    RampMerge,
    Roundabout,
}

/// A complete road network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub kind: NetworkKind,
    pub segments: Vec<Segment>,
    pub junctions: Vec<Junction>,
    pub lane_width: f64,
    /// Ramp-merge only: frame coordinate where the on-ramp ends.
    pub merge_pos: Option<f64>,
    /// Ramp-merge only: frame coordinate agents must reach for success.
    pub endpoint_pos: Option<f64>,
}

impl RoadNetwork {
    pub fn segment(&self, id: &SegmentId) -> Option<&Segment> {
        self.segments.iter().find(|s| &s.id == id)
    }

    /// Panicking accessor for segments that are known to exist (vehicle
    /// states are validated against the network on construction).
    pub fn seg(&self, id: &SegmentId) -> &Segment {
        self.segment(id)
            .unwrap_or_else(|| panic!("unknown segment {id}"))
    }

    /// The continuation junction leaving `from`'s far end, if any.
    pub fn continuation_from(&self, from: &SegmentId) -> Option<&Junction> {
        self.junctions.iter().find(
            |j| matches!(j, Junction::Continuation { from: f, .. } if f == from),
        )
    }

    /// The exit junction from cyclic segment `from` onto `to`, if any.
    pub fn exit_to(&self, from: &SegmentId, to: &SegmentId) -> Option<&Junction> {
        self.junctions.iter().find(|j| {
            matches!(j, Junction::Exit { from: f, to: t, .. } if f == from && t == to)
        })
    }

    /// Lane adjacent to `(segment, lane)` on the given side at longitudinal
    /// position `s`, possibly on a different segment of the same frame
    /// (e.g. stepping left from the on-ramp onto the rightmost main lane).
    /// Lanes of the same segment win over parallel segments.
    pub fn adjacent_lane(
        &self,
        segment: &SegmentId,
        lane: usize,
        s: f64,
        side: LaneSide,
    ) -> Option<(SegmentId, usize)> {
        let seg = self.segment(segment)?;
        let target_slot = seg.slot(lane) + side.slot_delta();
        let lane_in = |cand: &Segment| -> Option<usize> {
            let rel = target_slot - cand.base_slot;
            (0..cand.lane_count as i32)
                .contains(&rel)
                .then_some(rel as usize)
        };
        if let Some(l) = lane_in(seg) {
            return Some((seg.id.clone(), l));
        }
        let x = seg.frame_pos(s);
        self.segments
            .iter()
            .filter(|c| c.frame == seg.frame && c.id != seg.id)
            .filter(|c| {
                if c.cyclic {
                    true
                } else {
                    x >= c.origin - 1e-9 && x <= c.origin + c.length + 1e-9
                }
            })
            .find_map(|c| lane_in(c).map(|l| (c.id.clone(), l)))
    }

    /// Signed longitudinal distance from `a` to `b` within one frame;
    /// positive when `b` is ahead. For cyclic frames the result is wrapped
    /// into `(-C/2, C/2]`.
    pub fn frame_delta(&self, frame_cyclic: Option<f64>, a: f64, b: f64) -> f64 {
        match frame_cyclic {
            Some(period) => wrap_centered(b - a, period),
            None => b - a,
        }
    }

    /// Period of a frame if it contains a cyclic segment.
    pub fn frame_period(&self, frame: usize) -> Option<f64> {
        self.segments
            .iter()
            .find(|s| s.frame == frame && s.cyclic)
            .map(|s| s.length)
    }
}

/// Wrap a signed delta into `(-period/2, period/2]`.
pub fn wrap_centered(delta: f64, period: f64) -> f64 {
    let d = delta.rem_euclid(period);
    if d > period / 2.0 {
        d - period
    } else {
        d
    }
}

/// Forward (non-negative) arc from `from` to `to` on a cycle of the given
/// period.
pub fn forward_arc(from: f64, to: f64, period: f64) -> f64 {
    (to - from).rem_euclid(period)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_lane_main_with_ramp() -> RoadNetwork {
        RoadNetwork {
            kind: NetworkKind::RampMerge,
            segments: vec![
                Segment {
                    id: "main".into(),
                    length: 700.0,
                    lane_count: 2,
                    frame: 0,
                    origin: -240.0,
                    base_slot: 0,
                    cyclic: false,
                },
                Segment {
                    id: "ramp".into(),
                    length: 120.0,
                    lane_count: 1,
                    frame: 0,
                    origin: 40.0,
                    base_slot: 2,
                    cyclic: false,
                },
            ],
            junctions: vec![],
            lane_width: LANE_WIDTH,
            merge_pos: Some(160.0),
            endpoint_pos: Some(410.0),
        }
    }

    #[test]
    fn ramp_left_neighbor_is_rightmost_main_lane() {
        let net = two_lane_main_with_ramp();
        let adj = net.adjacent_lane(&"ramp".into(), 0, 60.0, LaneSide::Left);
        assert_eq!(adj, Some(("main".into(), 1)));
    }

    #[test]
    fn main_right_neighbor_is_ramp_only_alongside_it() {
        let net = two_lane_main_with_ramp();
        // x = 100 lies within the ramp's [40, 160] extent.
        let beside = net.adjacent_lane(&"main".into(), 1, 340.0, LaneSide::Right);
        assert_eq!(beside, Some(("ramp".into(), 0)));
        // x = 200 is past the merge point: nothing to the right.
        let past = net.adjacent_lane(&"main".into(), 1, 440.0, LaneSide::Right);
        assert_eq!(past, None);
        // Lane 1 -> lane 0 stays on the main segment.
        let inner = net.adjacent_lane(&"main".into(), 1, 340.0, LaneSide::Left);
        assert_eq!(inner, Some(("main".into(), 0)));
    }

    #[test]
    fn leftmost_lane_has_no_left_neighbor() {
        let net = two_lane_main_with_ramp();
        assert_eq!(net.adjacent_lane(&"main".into(), 0, 0.0, LaneSide::Left), None);
    }

    #[test]
    fn cyclic_positions_wrap() {
        let ring = Segment {
            id: "ring".into(),
            length: 100.0,
            lane_count: 2,
            frame: 0,
            origin: 0.0,
            base_slot: 0,
            cyclic: true,
        };
        assert!((ring.frame_pos(130.0) - 30.0).abs() < 1e-12);
        assert!((ring.frame_pos(-20.0) - 80.0).abs() < 1e-12);
    }

    #[test]
    fn centered_wrap_is_signed_shortest_path() {
        assert!((wrap_centered(90.0, 100.0) - (-10.0)).abs() < 1e-12);
        assert!((wrap_centered(-90.0, 100.0) - 10.0).abs() < 1e-12);
        assert!((wrap_centered(40.0, 100.0) - 40.0).abs() < 1e-12);
        assert!((forward_arc(75.0, 25.0, 100.0) - 50.0).abs() < 1e-12);
    }
}
