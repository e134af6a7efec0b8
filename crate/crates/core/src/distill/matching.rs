//! Minimum-distance one-to-one matching of ground-truth vehicles to detections.

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;

use crate::geometry::Vec2;

/// Cost units per meter (costs are integers).
const SCALE: f64 = 1e6;
const OUT_OF_GATE: i64 = 1 << 50;

/// Pairs `(gt index, detection index)` with center distance at most `gate`, chosen to
/// first maximize the number of gated pairs and then minimize their total distance.
pub fn match_centers(gt: &[Vec2], det: &[Vec2], gate: f64) -> Vec<(usize, usize)> {
    if gt.is_empty() || det.is_empty() {
        return vec![];
    }
    let transpose = gt.len() > det.len();
    let (rows, cols) = if transpose { (det, gt) } else { (gt, det) };
    let weights: Vec<Vec<i64>> = rows
        .iter()
        .map(|a| {
            cols.iter()
                .map(|b| {
                    let d = a.dist(*b);
                    if d <= gate { -((d * SCALE).round() as i64) } else { -OUT_OF_GATE }
                })
                .collect()
        })
        .collect();
    let m = Matrix::from_rows(weights).expect("rectangular weight matrix");
    let (_, assign) = kuhn_munkres(&m);
    let mut out: Vec<(usize, usize)> = assign
        .into_iter()
        .enumerate()
        .filter(|&(r, c)| rows[r].dist(cols[c]) <= gate)
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .collect();
    out.sort();
    out
}
