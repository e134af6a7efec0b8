//! Point painting and sparse pillarization.

use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::microworld::semantic::NUM_CLASSES;

/// `(x, y, z, intensity)` followed by the class scores.
pub const PAINTED_DIM: usize = 4 + NUM_CLASSES;
/// Painted features plus the offset to the pillar center.
pub const POINT_FEATURES: usize = PAINTED_DIM + 2;
pub const DEFAULT_MAX_POINTS: usize = 16;

pub type PaintedPoint = [f32; PAINTED_DIM];

/// Concatenates per-point class scores onto the raw point features.
pub fn point_paint(points: &[[f32; 4]], scores: &[Vec<f32>]) -> Result<Vec<PaintedPoint>> {
    if points.len() != scores.len() {
        return Err(Error::InvalidArgument(format!("{} points but {} score vectors", points.len(), scores.len())));
    }
    points
        .iter()
        .zip(scores)
        .map(|(p, s)| {
            if s.len() != NUM_CLASSES {
                return Err(Error::InvalidArgument(format!("score vector has {} entries, expected {NUM_CLASSES}", s.len())));
            }
            let mut out = [0.0; PAINTED_DIM];
            out[..4].copy_from_slice(p);
            out[4..].copy_from_slice(s);
            Ok(out)
        })
        .collect()
}

/// Painted points of a flat `(x, y, z, i)` / five-score layout.
pub fn paint_flat(points: &[f32], scores: &[f32]) -> Result<Vec<PaintedPoint>> {
    if points.len() % 4 != 0 || scores.len() % NUM_CLASSES != 0 || points.len() / 4 != scores.len() / NUM_CLASSES {
        return Err(Error::InvalidArgument("point and score buffers disagree".into()));
    }
    let pts: Vec<[f32; 4]> = points.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect();
    let sc: Vec<Vec<f32>> = scores.chunks_exact(NUM_CLASSES).map(|c| c.to_vec()).collect();
    point_paint(&pts, &sc)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pillar {
    pub row: usize,
    pub col: usize,
    pub points: Vec<[f32; POINT_FEATURES]>,
}

/// Non-empty pillars in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePillars {
    pub spec: GridSpec,
    pub max_points: usize,
    pub pillars: Vec<Pillar>,
}

impl SparsePillars {
    pub fn num_points(&self) -> usize {
        self.pillars.iter().map(|p| p.points.len()).sum()
    }

    /// Flattened point features, the pillar index of each point and the dense cell of each pillar.
    pub fn flatten(&self) -> (Vec<f32>, Vec<usize>, Vec<usize>) {
        let mut feats = Vec::with_capacity(self.num_points() * POINT_FEATURES);
        let mut seg = Vec::with_capacity(self.num_points());
        let cols = self.spec.cols();
        let mut cells = Vec::with_capacity(self.pillars.len());
        for (i, p) in self.pillars.iter().enumerate() {
            for q in &p.points {
                feats.extend_from_slice(q);
                seg.push(i);
            }
            cells.push(p.row * cols + p.col);
        }
        (feats, seg, cells)
    }
}

/// Groups in-range points by pillar. Each pillar keeps its `max_points`
/// nearest points (by range from the sensor, ties by input order).
pub fn pillarize(points: &[PaintedPoint], spec: &GridSpec, max_points: usize) -> SparsePillars {
    let mut cells: Vec<(usize, f32, usize)> = vec![];
    for (i, p) in points.iter().enumerate() {
        let v = crate::geometry::Vec2::new(p[0] as f64, p[1] as f64);
        if let Some((r, c)) = spec.cell_of(v) {
            cells.push((r * spec.cols() + c, p[0].hypot(p[1]), i));
        }
    }
    cells.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut pillars: Vec<Pillar> = vec![];
    for (cell, _, i) in cells {
        let (row, col) = (cell / spec.cols(), cell % spec.cols());
        if pillars.last().map(|p| p.row * spec.cols() + p.col != cell).unwrap_or(true) {
            pillars.push(Pillar { row, col, points: vec![] });
        }
        let pillar = pillars.last_mut().unwrap();
        if pillar.points.len() >= max_points {
            continue;
        }
        let c = spec.cell_center(row, col);
        let p = &points[i];
        let mut f = [0.0; POINT_FEATURES];
        f[..PAINTED_DIM].copy_from_slice(p);
        f[PAINTED_DIM] = p[0] - c.x as f32;
        f[PAINTED_DIM + 1] = p[1] - c.y as f32;
        pillar.points.push(f);
    }
    SparsePillars { spec: *spec, max_points, pillars }
}
