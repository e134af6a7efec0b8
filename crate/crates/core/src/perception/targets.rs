//! Training inputs and targets derived from a recorded frame.

use super::detect::{splat_boxes, DetClass, OrientedBox};
use super::pillars::{paint_flat, pillarize, PaintedPoint, SparsePillars, PAINTED_DIM};
use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Vec2};
use crate::microworld::recorder::Frame;
use crate::microworld::semantic::CLASS_VEHICLE;
use crate::microworld::world::ActorClass;

/// Height of the synthetic ego outline points.
const EGO_OUTLINE_Z: f32 = 0.8;
const EGO_OUTLINE_STEP: f64 = 0.25;

/// Ego-frame ground-truth boxes: every actor the sensor saw, plus the ego.
pub fn gt_boxes(frame: &Frame, spec: &GridSpec) -> Vec<OrientedBox> {
    frame
        .actors
        .iter()
        .filter(|a| a.id == frame.ego_id || (a.observed && a.lidar_hits > 0))
        .filter_map(|a| {
            let local = frame.ego_pose.relative(&a.pose);
            let center = local.position();
            if !spec.contains(center) {
                return None;
            }
            Some(OrientedBox {
                center,
                yaw: local.yaw,
                half_length: a.half_length,
                half_width: a.half_width,
                class: match a.class {
                    ActorClass::Vehicle => DetClass::Vehicle,
                    ActorClass::Pedestrian => DetClass::Pedestrian,
                },
                score: 1.0,
                is_ego: a.id == frame.ego_id,
            })
        })
        .collect()
}

/// Outline of the ego footprint as vehicle-painted points. The lidar never
/// returns from the ego itself, so this is the only cue for its own box.
pub fn ego_outline(frame: &Frame) -> Vec<PaintedPoint> {
    let Some(ego) = frame.actor(frame.ego_id) else { return vec![] };
    outline_points(&OrientedRect::new(frame.ego_pose.relative(&ego.pose), ego.half_length, ego.half_width))
}

/// Vehicle-painted points along the edges of `rect`.
pub fn outline_points(rect: &OrientedRect) -> Vec<PaintedPoint> {
    let mut out = vec![];
    for (a, b) in rect.edges() {
        let n = ((b - a).norm() / EGO_OUTLINE_STEP).ceil().max(1.0) as usize;
        for k in 0..n {
            let p: Vec2 = a + (b - a) * (k as f64 / n as f64);
            let mut q = [0.0f32; PAINTED_DIM];
            q[0] = p.x as f32;
            q[1] = p.y as f32;
            q[2] = EGO_OUTLINE_Z;
            q[3] = 1.0;
            q[4 + CLASS_VEHICLE] = 1.0;
            out.push(q);
        }
    }
    out
}

/// Painted lidar points of a frame followed by the ego outline.
pub fn frame_points(frame: &Frame) -> Result<Vec<PaintedPoint>> {
    let mut pts = paint_flat(&frame.points, &frame.point_scores)?;
    pts.extend(ego_outline(frame));
    Ok(pts)
}

pub fn frame_pillars(frame: &Frame, spec: &GridSpec, max_points: usize) -> Result<SparsePillars> {
    Ok(pillarize(&frame_points(frame)?, spec, max_points))
}

/// Pillars from a live scan: flat ego-frame points and class scores plus the outline
/// of an ego with the given extent at the origin.
pub fn sensor_pillars(points: &[f32], scores: &[f32], half_length: f64, half_width: f64, spec: &GridSpec, max_points: usize) -> Result<SparsePillars> {
    let mut pts = paint_flat(points, scores)?;
    pts.extend(outline_points(&OrientedRect::new(crate::geometry::Pose2::default(), half_length, half_width)));
    Ok(pillarize(&pts, spec, max_points))
}

/// Regression target at a box center cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegTarget {
    pub row: usize,
    pub col: usize,
    /// `(sin yaw, cos yaw, ln half_length, ln half_width)`.
    pub values: [f32; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerceptionTargets {
    pub rows: usize,
    pub cols: usize,
    /// `[2, rows, cols]` Gaussian centerness.
    pub center: Vec<f32>,
    pub regression: Vec<RegTarget>,
    /// `[3, rows, cols]` road, solid, broken.
    pub semantic: Vec<f32>,
    /// `[3, rows, cols]` 1 where the semantic label is known.
    pub semantic_weight: Vec<f32>,
    pub boxes: Vec<OrientedBox>,
}

impl PerceptionTargets {
    pub fn from_boxes(boxes: Vec<OrientedBox>, semantic: Vec<f32>, semantic_weight: Vec<f32>, spec: &GridSpec) -> Self {
        let (center, cells) = splat_boxes(&boxes, spec);
        let mut regression: Vec<RegTarget> = vec![];
        for (b, cell) in boxes.iter().zip(cells) {
            let Some((row, col)) = cell else { continue };
            // First box wins a shared center cell.
            if regression.iter().any(|t| t.row == row && t.col == col) {
                continue;
            }
            let values = [b.yaw.sin() as f32, b.yaw.cos() as f32, b.half_length.ln() as f32, b.half_width.ln() as f32];
            regression.push(RegTarget { row, col, values });
        }
        Self { rows: spec.rows(), cols: spec.cols(), center, regression, semantic, semantic_weight, boxes }
    }
}

/// Detection and semantic targets of a frame. `include_ego` exists for ablations.
pub fn build_targets(frame: &Frame, spec: &GridSpec, include_ego: bool) -> Result<PerceptionTargets> {
    let r = &frame.sem_rasters;
    if r.road.rows != spec.rows() || r.road.cols != spec.cols() {
        return Err(Error::GridMismatch(format!("rasters are {}x{}, grid is {}x{}", r.road.rows, r.road.cols, spec.rows(), spec.cols())));
    }
    let mut boxes = gt_boxes(frame, spec);
    if !include_ego {
        boxes.retain(|b| !b.is_ego);
    }
    let hw = spec.rows() * spec.cols();
    let mut semantic = Vec::with_capacity(3 * hw);
    for ch in r.channels() {
        semantic.extend(ch.to_f32());
    }
    let weight = match &r.valid {
        Some(v) => v.to_f32().repeat(3),
        None => vec![1.0; 3 * hw],
    };
    Ok(PerceptionTargets::from_boxes(boxes, semantic, weight, spec))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::microworld::collect::{collect_episode, CollectConfig};
    use crate::microworld::map::RoadMap;
    use crate::microworld::recorder::DrivingLog;
    use crate::microworld::scenarios::{ScenarioConfig, ScenarioKind};
    use std::sync::Arc;

    pub(crate) fn sample_frame() -> Frame {
        let dir = tempfile::tempdir().unwrap();
        let map = Arc::new(RoadMap::town());
        let mut cfg = CollectConfig::default();
        cfg.max_time = 12.0;
        let s = collect_episode(map, &cfg, &ScenarioConfig::new(ScenarioKind::Traffic), 3, dir.path()).unwrap();
        let log = DrivingLog::open(&s.dir).unwrap();
        log.frame(log.len() / 3).unwrap()
    }

    #[test]
    fn ego_box_is_a_target_at_the_anchor() {
        let f = sample_frame();
        let spec = GridSpec::desk();
        let t = build_targets(&f, &spec, true).unwrap();
        let ego: Vec<_> = t.boxes.iter().filter(|b| b.is_ego).collect();
        assert_eq!(ego.len(), 1);
        assert!(ego[0].center.norm() < 1e-9);
        let (er, ec) = spec.ego_cell();
        assert_eq!(t.center[er * spec.cols() + ec], 1.0);
        let no_ego = build_targets(&f, &spec, false).unwrap();
        assert_ne!(t.center, no_ego.center);
    }

    #[test]
    fn outline_surrounds_origin() {
        let f = sample_frame();
        let o = ego_outline(&f);
        assert!(o.len() > 20);
        for p in &o {
            assert!(p[0].abs() <= 2.26 && p[1].abs() <= 1.01);
        }
    }
}
