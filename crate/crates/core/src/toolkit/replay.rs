//! Bird's-eye SVG rendering of logged agent internals, one file per traced tick.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::command::Command;
use crate::error::Result;
use crate::harness::episode::{AgentTrace, DetectionRecord, SemanticMasks};
use crate::harness::EpisodeLog;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOptions {
    /// Pixels per meter.
    pub scale: f64,
    /// Plans below this likelihood are not drawn.
    pub min_likelihood: f64,
    /// Half extent of the view around the ego when no semantic map is logged (m).
    pub half_extent: f64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { scale: 4.0, min_likelihood: 0.0, half_extent: 40.0 }
    }
}

const LAYER_COLORS: [&str; 3] = ["#d9d9d9", "#4d4d4d", "#9a9a9a"];
const PLAN_COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2"];

/// View window in the ego frame: forward is up, left is left.
struct View {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    scale: f64,
}

impl View {
    fn px(&self, x: f64, y: f64) -> (f64, f64) {
        ((self.y_max - y) * self.scale, (self.x_max - x) * self.scale)
    }

    fn size(&self) -> (f64, f64) {
        ((self.y_max - self.y_min) * self.scale, (self.x_max - self.x_min) * self.scale)
    }
}

fn polyline(out: &mut String, view: &View, pts: impl Iterator<Item = [f64; 2]>, class: &str, color: &str, opacity: f64) {
    let coords: Vec<String> = pts.map(|[x, y]| view.px(x, y)).map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
    let _ = writeln!(out, r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="1.5" stroke-opacity="{opacity:.3}"/>"#, coords.join(" "));
}

fn rect_corners(x: f64, y: f64, yaw: f64, hl: f64, hw: f64) -> Vec<[f64; 2]> {
    let (s, c) = yaw.sin_cos();
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw), (hl, hw)].iter().map(|&(a, b)| [x + a * c - b * s, y + a * s + b * c]).collect()
}

fn semantic(out: &mut String, view: &View, m: &SemanticMasks) {
    for (layer, color) in LAYER_COLORS.iter().enumerate() {
        let _ = writeln!(out, r#"<g class="semantic-{layer}" fill="{color}">"#);
        for row in 0..m.rows {
            // Horizontal runs of set cells become single rectangles.
            let mut col = 0;
            while col < m.cols {
                if !m.get(layer, row, col) {
                    col += 1;
                    continue;
                }
                let start = col;
                while col < m.cols && m.get(layer, row, col) {
                    col += 1;
                }
                // Rows run along x, columns along y in the ego frame.
                let x0 = m.origin[0] + row as f64 * m.cell - m.cell / 2.0;
                let y0 = m.origin[1] + start as f64 * m.cell - m.cell / 2.0;
                let y1 = m.origin[1] + col as f64 * m.cell - m.cell / 2.0;
                let (left, top) = view.px(x0 + m.cell, y1);
                let _ = writeln!(out, r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}"/>"#, (y1 - y0) * view.scale, m.cell * view.scale);
            }
        }
        out.push_str("</g>\n");
    }
}

fn detection(out: &mut String, view: &View, d: &DetectionRecord, min_likelihood: f64) {
    let class = if d.is_ego { "ego" } else if d.vehicle { "box" } else { "box pedestrian" };
    polyline(out, view, rect_corners(d.x, d.y, d.yaw, d.half_length, d.half_width).into_iter(), class, "#d62728", d.score.clamp(0.2, 1.0));
    let Some(plans) = &d.plans else { return };
    let (s, c) = d.yaw.sin_cos();
    for cmd in Command::ALL {
        let p = plans.likelihoods[cmd.index()];
        if p < min_likelihood {
            continue;
        }
        let pts = std::iter::once([0.0, 0.0]).chain(plans.trajectory(cmd).iter().copied()).map(|[a, b]| [d.x + a * c - b * s, d.y + a * s + b * c]);
        polyline(out, view, pts, "plan", PLAN_COLORS[cmd.index()], p.clamp(0.1, 1.0));
    }
}

/// SVG document for one traced tick.
pub fn render_trace(trace: &AgentTrace, tick: u64, opts: &ReplayOptions) -> String {
    let view = match &trace.semantic {
        Some(m) => View {
            x_min: m.origin[0] - m.cell / 2.0,
            x_max: m.origin[0] + (m.rows as f64 - 0.5) * m.cell,
            y_min: m.origin[1] - m.cell / 2.0,
            y_max: m.origin[1] + (m.cols as f64 - 0.5) * m.cell,
            scale: opts.scale,
        },
        None => View { x_min: -opts.half_extent, x_max: opts.half_extent, y_min: -opts.half_extent, y_max: opts.half_extent, scale: opts.scale },
    };
    let (w, h) = view.size();
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.2} {h:.2}">"#);
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if let Some(m) = &trace.semantic {
        semantic(&mut out, &view, m);
    }
    for d in &trace.detections {
        detection(&mut out, &view, d, opts.min_likelihood);
    }
    polyline(&mut out, &view, std::iter::once([0.0, 0.0]).chain(trace.plan.iter().copied()), "ego-plan", "#000000", 1.0);
    let (gx, gy) = view.px(trace.goal[0], trace.goal[1]);
    let _ = writeln!(out, r##"<circle class="goal" cx="{gx:.2}" cy="{gy:.2}" r="3" fill="#17becf"/>"##);
    let _ = writeln!(
        out,
        r#"<text x="4" y="14" font-family="monospace" font-size="12">tick {tick} {} brake {:.2}{}</text>"#,
        trace.command.name(),
        trace.brake_score,
        if trace.hard_stop { " STOP" } else { "" }
    );
    out.push_str("</svg>\n");
    out
}

/// Renders every traced tick of the episode log in `log_dir` into `out`. Ticks that
/// fail to decode are skipped with a warning. Returns the written files.
pub fn replay(log_dir: &Path, out: &Path, opts: &ReplayOptions) -> Result<Vec<PathBuf>> {
    let (_, ticks) = EpisodeLog::read_lenient(log_dir)?;
    let mut written = vec![];
    for (i, t) in ticks.into_iter().enumerate() {
        let tick = match t {
            Ok(t) => t,
            Err(e) => {
                log::warn!("{}: tick record {i} skipped: {e}", log_dir.display());
                continue;
            }
        };
        let Some(trace) = &tick.trace else { continue };
        if written.is_empty() {
            std::fs::create_dir_all(out)?;
        }
        let path = out.join(format!("tick-{:06}.svg", tick.tick));
        std::fs::write(&path, render_trace(trace, tick.tick, opts))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose2;
    use crate::harness::episode::{EpisodeMeta, Termination, TickRecord};
    use crate::planner::model::PlanSet;

    fn trace(n_det: usize) -> AgentTrace {
        let plans = PlanSet { trajectories: (0..6).map(|c| (1..=10).map(|i| [i as f64, c as f64 * 0.1 * i as f64]).collect()).collect(), likelihoods: [0.5, 0.2, 0.1, 0.1, 0.05, 0.05] };
        let mut detections: Vec<DetectionRecord> = (0..n_det)
            .map(|i| DetectionRecord { x: 10.0 + 5.0 * i as f64, y: 3.0, yaw: 0.3, half_length: 2.3, half_width: 1.0, vehicle: true, is_ego: false, score: 0.9, plans: Some(plans.clone()) })
            .collect();
        detections.push(DetectionRecord { x: 0.0, y: 0.0, yaw: 0.0, half_length: 2.3, half_width: 1.0, vehicle: true, is_ego: true, score: 1.0, plans: None });
        let mut layers = [vec![0u8; 8], vec![0u8; 8], vec![0u8; 8]];
        layers[0][0] = 0b0000_0111;
        AgentTrace {
            command: Command::FollowLane,
            goal: [20.0, 0.0],
            pose_estimate: Pose2::default(),
            plan: (1..=10).map(|i| [i as f64 * 2.0, 0.0]).collect(),
            detections,
            semantic: Some(SemanticMasks { rows: 8, cols: 8, cell: 1.0, origin: [-4.0, -4.0], layers }),
            brake_score: 0.1,
            hard_stop: false,
        }
    }

    fn log_with(traces: Vec<Option<AgentTrace>>) -> EpisodeLog {
        let ticks = traces
            .into_iter()
            .enumerate()
            .map(|(i, trace)| TickRecord { tick: i as u64, time: i as f64 * 0.1, pose: Pose2::default(), speed: 0.0, progress: 0.0, on_road: true, events: vec![], control: None, trace })
            .collect();
        let meta = EpisodeMeta {
            agent: "test".into(),
            map_id: "m".into(),
            scenario: "empty".into(),
            seed: 0,
            repeat: 0,
            preset: crate::harness::NoisePreset::named("clean").unwrap(),
            route_length: 100.0,
            dt: 0.1,
            time_budget: 60.0,
            termination: Termination::Completed,
            error: None,
        };
        EpisodeLog { meta, ticks }
    }

    #[test]
    fn two_detections_give_two_boxes_and_six_plans_each() {
        let svg = render_trace(&trace(2), 0, &ReplayOptions::default());
        assert_eq!(svg.matches(r#"class="box""#).count(), 2);
        assert_eq!(svg.matches(r#"class="plan""#).count(), 12);
        assert_eq!(svg.matches(r#"class="ego-plan""#).count(), 1);
        assert_eq!(svg.matches("<rect x=").count(), 1);
        let filtered = render_trace(&trace(2), 0, &ReplayOptions { min_likelihood: 0.1, ..Default::default() });
        assert_eq!(filtered.matches(r#"class="plan""#).count(), 8);
    }

    #[test]
    fn replay_is_idempotent_and_skips_untraced_ticks() {
        let dir = tempfile::tempdir().unwrap();
        let log_dir = dir.path().join("log");
        log_with(vec![Some(trace(1)), None, Some(trace(2))]).save(&log_dir).unwrap();
        let out = dir.path().join("svg");
        let a = replay(&log_dir, &out, &ReplayOptions::default()).unwrap();
        assert_eq!(a.len(), 2);
        let bytes: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        let b = replay(&log_dir, &out, &ReplayOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(bytes, b.iter().map(|p| std::fs::read(p).unwrap()).collect::<Vec<_>>());
    }

    #[test]
    fn empty_log_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let log_dir = dir.path().join("log");
        log_with(vec![]).save(&log_dir).unwrap();
        let out = dir.path().join("svg");
        assert!(replay(&log_dir, &out, &ReplayOptions::default()).unwrap().is_empty());
        assert!(!out.exists());
    }

    #[test]
    fn corrupt_tick_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let log_dir = dir.path().join("log");
        log_with(vec![Some(trace(1)), Some(trace(1))]).save(&log_dir).unwrap();
        // Scramble the first record's payload but keep its length prefix.
        let p = log_dir.join("ticks.cbor");
        let mut bytes = std::fs::read(&p).unwrap();
        for b in &mut bytes[8..20] {
            *b = 0xff;
        }
        std::fs::write(&p, bytes).unwrap();
        let files = replay(&log_dir, &dir.path().join("svg"), &ReplayOptions::default()).unwrap();
        assert_eq!(files.len(), 1);
    }
}
