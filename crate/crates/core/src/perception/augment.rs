//! Rotation augmentation about the ego.

use crate::bev::{BitRaster, GridSpec, SemRasters};
use crate::geometry::{wrap_angle, Vec2};
use crate::microworld::recorder::Frame;

/// Rotates the frame's ego-frame content by `theta` (counter-clockwise). World-frame
/// records (actors, futures) are re-expressed through the ego pose, so every
/// ego-frame quantity derived from them rotates consistently.
pub fn rotation_augment(frame: &Frame, theta: f64, spec: &GridSpec) -> Frame {
    if theta == 0.0 {
        return frame.clone();
    }
    let mut out = frame.clone();
    out.ego_pose.yaw = wrap_angle(frame.ego_pose.yaw - theta);
    let (s, c) = (theta.sin() as f32, theta.cos() as f32);
    for p in out.points.chunks_exact_mut(4) {
        let (x, y) = (p[0], p[1]);
        p[0] = c * x - s * y;
        p[1] = s * x + c * y;
    }
    let g = Vec2::new(frame.ego_goal[0], frame.ego_goal[1]).rotate(theta);
    out.ego_goal = [g.x, g.y];
    out.sem_rasters = rotate_rasters(&frame.sem_rasters, theta, spec);
    out
}

/// Nearest-neighbour resampling of rasters under a rotation about the ego origin.
/// Cells that pull from outside the source grid are marked invalid.
pub fn rotate_rasters(r: &SemRasters, theta: f64, spec: &GridSpec) -> SemRasters {
    let mut out = SemRasters::empty(spec);
    let mut valid = BitRaster::new(spec.rows(), spec.cols());
    for row in 0..spec.rows() {
        for col in 0..spec.cols() {
            let src = spec.cell_center(row, col).rotate(-theta);
            let Some((sr, sc)) = spec.cell_of(src) else { continue };
            if !r.is_valid(sr, sc) {
                continue;
            }
            valid.set(row, col, true);
            out.road.set(row, col, r.road.get(sr, sc));
            out.solid.set(row, col, r.solid.get(sr, sc));
            out.broken.set(row, col, r.broken.get(sr, sc));
        }
    }
    out.valid = Some(valid);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::pillars::{paint_flat, pillarize};
    use crate::perception::targets::gt_boxes;
    use rand::{Rng, SeedableRng};

    fn frame() -> Frame {
        crate::perception::targets::tests::sample_frame()
    }

    #[test]
    fn zero_angle_is_identity() {
        let f = frame();
        assert_eq!(rotation_augment(&f, 0.0, &GridSpec::desk()), f);
    }

    #[test]
    fn quarter_turn_maps_x_to_y() {
        let mut f = frame();
        f.points = vec![1.0, 0.0, 0.5, 1.0];
        f.point_scores = vec![1.0, 0.0, 0.0, 0.0, 0.0];
        let g = rotation_augment(&f, std::f64::consts::FRAC_PI_2, &GridSpec::desk());
        assert!(g.points[0].abs() < 1e-6 && (g.points[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn boxes_and_goal_rotate_with_points() {
        let f = frame();
        let spec = GridSpec::desk();
        let th = 0.4;
        let g = rotation_augment(&f, th, &spec);
        let b0 = gt_boxes(&f, &spec);
        let b1 = gt_boxes(&g, &spec);
        for a in &b0 {
            let rc = a.center.rotate(th);
            if !spec.contains(rc) {
                continue;
            }
            let m = b1.iter().find(|b| b.center.dist(rc) < 1e-6).expect("rotated box present");
            assert!(wrap_angle(m.yaw - a.yaw - th).abs() < 1e-9);
        }
        let goal = Vec2::new(f.ego_goal[0], f.ego_goal[1]).rotate(th);
        assert!((g.ego_goal[0] - goal.x).abs() < 1e-9 && (g.ego_goal[1] - goal.y).abs() < 1e-9);
    }

    #[test]
    fn rotated_pillar_indices_match_per_point_oracle() {
        let spec = GridSpec::desk();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut f = frame();
        let n = 200;
        f.points = (0..n).flat_map(|_| [rng.random_range(-8.0..30.0f32), rng.random_range(-20.0..20.0f32), 0.0, 1.0]).collect();
        f.point_scores = vec![0.2; 5 * n];
        let th = rng.random_range(-3.0..3.0);
        let g = rotation_augment(&f, th, &spec);
        let rotated = pillarize(&paint_flat(&g.points, &g.point_scores).unwrap(), &spec, 64);
        for i in 0..n {
            let p = Vec2::new(f.points[4 * i] as f64, f.points[4 * i + 1] as f64).rotate(th);
            let Some((r, c)) = spec.cell_of(p) else { continue };
            // Skip points within float noise of a cell boundary.
            let fx = (p.x - spec.x_min) / spec.pillar_size;
            let fy = (p.y - spec.y_min) / spec.pillar_size;
            if (fx - fx.round()).abs() < 1e-3 || (fy - fy.round()).abs() < 1e-3 {
                continue;
            }
            let hit = rotated.pillars.iter().find(|q| q.row == r && q.col == c).expect("pillar exists");
            assert!(hit.points.iter().any(|q| (q[0] as f64 - p.x).abs() < 1e-4 && (q[1] as f64 - p.y).abs() < 1e-4));
        }
    }

    #[test]
    fn raster_rotation_marks_outside_invalid() {
        let f = frame();
        let spec = GridSpec::desk();
        let r = rotate_rasters(&f.sem_rasters, std::f64::consts::PI, &spec);
        let v = r.valid.as_ref().unwrap();
        // Rotating by pi maps x=60 to x=-60, outside the grid.
        let (row, col) = spec.cell_of(Vec2::new(60.0, 0.0)).unwrap();
        assert!(!v.get(row, col));
        let (row, col) = spec.cell_of(Vec2::new(5.0, 0.0)).unwrap();
        assert!(v.get(row, col));
    }
}
