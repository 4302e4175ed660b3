//! Log replay and static SVG rendering.
//!
//! Episodes re-simulate exactly from their log: the header pins the
//! scenario seed and stepping parameters, and the decision entries carry
//! every agent action, so replaying yields the same worlds the live run
//! saw. Rendering draws one schematic SVG per decision frame: road bands
//! per coordinate frame, one rectangle per vehicle (`class="vehicle"`,
//! agents additionally `agent`), and the frame's score annotations.

use std::fmt::Write as _;
use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::harness::log::{DecisionEntry, EpisodeLog};
use crate::harness::HarnessError;
use crate::scenario;
use crate::sim::{MetaAction, VehicleKind, World};

/// Worlds as seen at each decision frame: index `i` is the state the
/// agents observed at frame `i`; the final element is the terminal state
/// after the last logged step.
pub fn replay_worlds(log: &EpisodeLog) -> Result<Vec<World>, HarnessError> {
    let mut world = scenario::build_world(&log.header.scenario, log.header.horizon_s)?;
    let mut worlds = vec![world.clone()];
    for step in &log.steps {
        if world.done() {
            return Err(HarnessError::LogFormat(format!(
                "log continues past the terminal state at frame {}",
                step.frame
            )));
        }
        let mut actions = log.actions_at(step.frame);
        for id in world.agent_ids() {
            actions.entry(id).or_insert(MetaAction::Idle);
        }
        let res = world.step(&actions, log.header.dt)?;
        if (res.sim_time - step.sim_time).abs() > 1e-9 {
            return Err(HarnessError::LogFormat(format!(
                "replay diverged at frame {}: sim time {} vs logged {}",
                step.frame, res.sim_time, step.sim_time
            )));
        }
        worlds.push(world.clone());
    }
    Ok(worlds)
}

/// Parse a CLI frame range: `a..b` (half-open) or a single frame `n`.
pub fn parse_frame_range(text: &str) -> Result<Range<usize>, HarnessError> {
    let bad = || {
        HarnessError::Config(format!(
            "bad frame range {text:?}: expected `a..b` or a single frame number"
        ))
    };
    let text = text.trim();
    if let Some((a, b)) = text.split_once("..") {
        let start: usize = a.trim().parse().map_err(|_| bad())?;
        let end: usize = b.trim().parse().map_err(|_| bad())?;
        if start > end {
            return Err(HarnessError::Config(format!(
                "bad frame range {text:?}: start exceeds end"
            )));
        }
        Ok(start..end)
    } else {
        let n: usize = text.parse().map_err(|_| bad())?;
        Ok(n..n + 1)
    }
}

const PX_PER_M: f64 = 3.0;
const BAND_GAP: f64 = 24.0;
const MARGIN: f64 = 16.0;
const LINE_H: f64 = 16.0;

fn fmt1(x: f64) -> String {
    format!("{:.1}", x)
}

/// Draw one world as a schematic SVG. `entries` are the decision entries
/// of the rendered frame and become the score annotations.
pub fn render_frame(world: &World, entries: &[DecisionEntry]) -> String {
    let road = &world.road;
    let lw = road.lane_width;

    // One horizontal band per coordinate frame, stacked in frame order.
    let mut frames: Vec<usize> = road.segments.iter().map(|s| s.frame).collect();
    frames.sort_unstable();
    frames.dedup();
    struct Band {
        frame: usize,
        x_min: f64,
        x_max: f64,
        slot_min: i32,
        y: f64,
    }
    let header_h = MARGIN + LINE_H * (entries.len() as f64 + 1.0);
    let mut bands: Vec<Band> = Vec::new();
    let mut y = header_h + MARGIN;
    for &frame in &frames {
        let segs = road.segments.iter().filter(|s| s.frame == frame);
        let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut slot_min, mut slot_max) = (i32::MAX, i32::MIN);
        for seg in segs {
            x_min = x_min.min(seg.origin);
            x_max = x_max.max(seg.origin + seg.length);
            slot_min = slot_min.min(seg.base_slot);
            slot_max = slot_max.max(seg.base_slot + seg.lane_count as i32);
        }
        let height = (slot_max - slot_min) as f64 * lw;
        bands.push(Band { frame, x_min, x_max, slot_min, y });
        y += height + BAND_GAP;
    }
    let x_min_all = bands.iter().map(|b| b.x_min).fold(f64::INFINITY, f64::min);
    let x_max_all = bands.iter().map(|b| b.x_max).fold(f64::NEG_INFINITY, f64::max);
    let width = (x_max_all - x_min_all) * PX_PER_M + 2.0 * MARGIN;
    let height = y - BAND_GAP + MARGIN;
    let band_for = |frame: usize| bands.iter().find(|b| b.frame == frame).expect("known frame");
    let sx = |x: f64| (x - x_min_all) * PX_PER_M + MARGIN;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {} {}" font-family="monospace" font-size="12">"#,
        fmt1(width),
        fmt1(height)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="0" y="0" width="{}" height="{}" fill="#fcfcf8"/>"##,
        fmt1(width),
        fmt1(height)
    );

    // Score annotations.
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-weight="bold">frame {} | t = {} s</text>"#,
        fmt1(MARGIN),
        fmt1(MARGIN + 4.0),
        world.frame,
        fmt1(world.sim_time)
    );
    for (i, e) in entries.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" class="score">{}: {} | safety {} efficiency {} combined {}</text>"#,
            fmt1(MARGIN),
            fmt1(MARGIN + 4.0 + LINE_H * (i as f64 + 1.0)),
            e.agent_id,
            e.action.name(),
            fmt1(e.score.safety),
            fmt1(e.score.efficiency),
            fmt1(e.score.combined)
        );
    }

    // Road bands.
    for seg in &road.segments {
        let band = band_for(seg.frame);
        let y0 = band.y + (seg.base_slot - band.slot_min) as f64 * lw;
        let _ = writeln!(
            svg,
            r##"<rect class="road" x="{}" y="{}" width="{}" height="{}" fill="#e6e6e6" stroke="#888" stroke-width="1"/>"##,
            fmt1(sx(seg.origin)),
            fmt1(y0),
            fmt1(seg.length * PX_PER_M),
            fmt1(seg.lane_count as f64 * lw)
        );
        for lane in 1..seg.lane_count {
            let ly = y0 + lane as f64 * lw;
            let _ = writeln!(
                svg,
                r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#fff" stroke-width="1" stroke-dasharray="6 4"/>"##,
                fmt1(sx(seg.origin)),
                fmt1(ly),
                fmt1(sx(seg.origin + seg.length)),
                fmt1(ly)
            );
        }
        let _ = writeln!(
            svg,
            r##"<text x="{}" y="{}" fill="#666" font-size="10">{}</text>"##,
            fmt1(sx(seg.origin) + 2.0),
            fmt1(y0 - 3.0),
            seg.id
        );
    }

    // Vehicles, in id order for deterministic output.
    for v in world.vehicles.values() {
        let seg = road.seg(&v.segment);
        let band = band_for(seg.frame);
        let x_c = sx(seg.frame_pos(v.s));
        let y_c = band.y + world.lateral_pos(v) - band.slot_min as f64 * lw + lw / 2.0;
        let agent = v.kind == VehicleKind::LlmAgent;
        let class = if agent { "vehicle agent" } else { "vehicle" };
        let fill = if agent { "#d9534f" } else { "#4a90d9" };
        let stroke = if agent { r##" stroke="#7a1f1b" stroke-width="1.5""## } else { "" };
        let _ = writeln!(
            svg,
            r#"<rect class="{}" data-id="{}" x="{}" y="{}" width="{}" height="{}" fill="{}"{}/>"#,
            class,
            v.id,
            fmt1(x_c - v.length / 2.0 * PX_PER_M),
            fmt1(y_c - v.width / 2.0),
            fmt1(v.length * PX_PER_M),
            fmt1(v.width),
            fill,
            stroke
        );
        if agent {
            let _ = writeln!(
                svg,
                r##"<text x="{}" y="{}" fill="#7a1f1b" font-size="10">{}</text>"##,
                fmt1(x_c - v.length / 2.0 * PX_PER_M),
                fmt1(y_c - v.width / 2.0 - 3.0),
                v.id
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render each decision frame in `range` to `frame_NNNN.svg` under
/// `out_dir`, returning the written paths. An empty range writes nothing;
/// a non-empty range that reaches past the last decision frame is an
/// error.
pub fn render_range(
    log: &EpisodeLog,
    range: Range<usize>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    if range.is_empty() {
        return Ok(Vec::new());
    }
    let frames = log.steps.len();
    if range.end > frames {
        return Err(HarnessError::Render(format!(
            "frame range {}..{} is out of bounds: the log has {} decision frames",
            range.start, range.end, frames
        )));
    }
    let worlds = replay_worlds(log)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(range.len());
    for frame in range {
        let entries: Vec<DecisionEntry> = log
            .decisions
            .iter()
            .filter(|d| d.frame == frame as u32)
            .cloned()
            .collect();
        let svg = render_frame(&worlds[frame], &entries);
        let path = out_dir.join(format!("frame_{frame:04}.svg"));
        fs::write(&path, svg)?;
        written.push(path);
    }
    Ok(written)
}
