//! Rotated region-of-interest sampling from a dense map-view grid.

use serde::{Deserialize, Serialize};

use crate::bev::GridSpec;
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::nn::{Graph, Real, Var};

/// Crop layout in the vehicle frame. Rows run along +x (forward), columns along +y.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiTemplate {
    pub rows: usize,
    pub cols: usize,
    /// Sample spacing in meters.
    pub spacing: f64,
    /// Extent behind the vehicle origin in meters.
    pub back: f64,
}

impl Default for RoiTemplate {
    fn default() -> Self {
        Self { rows: 24, cols: 12, spacing: 1.0, back: 4.0 }
    }
}

impl RoiTemplate {
    /// Vehicle-frame position of crop cell `(i, j)`.
    pub fn local_point(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            -self.back + (i as f64 + 0.5) * self.spacing,
            -(self.cols as f64) * self.spacing / 2.0 + (j as f64 + 0.5) * self.spacing,
        )
    }
}

/// Metric placement of a dense `[.., rows, cols]` tensor; integer pixels are cell centers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFrame {
    pub x_min: f64,
    pub y_min: f64,
    pub cell: f64,
    pub rows: usize,
    pub cols: usize,
}

impl GridFrame {
    /// The pillar-resolution grid of `spec`.
    pub fn pillars(spec: &GridSpec) -> Self {
        Self { x_min: spec.x_min, y_min: spec.y_min, cell: spec.pillar_size, rows: spec.rows(), cols: spec.cols() }
    }

    /// The backbone output grid of `spec`.
    pub fn features(spec: &GridSpec) -> Self {
        Self { x_min: spec.x_min, y_min: spec.y_min, cell: spec.out_cell_size(), rows: spec.out_rows(), cols: spec.out_cols() }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.x_min && p.y >= self.y_min && p.x < self.x_min + self.cols as f64 * self.cell && p.y < self.y_min + self.rows as f64 * self.cell
    }

    /// `(col, row)` continuous pixel coordinates.
    pub fn to_pixel(&self, p: Vec2) -> (f64, f64) {
        ((p.x - self.x_min) / self.cell - 0.5, (p.y - self.y_min) / self.cell - 0.5)
    }
}

/// Pixel coordinates of every crop cell for a vehicle at `pose` (grid frame).
pub fn roi_coords(frame: &GridFrame, tpl: &RoiTemplate, pose: &Pose2) -> Result<Vec<(f64, f64)>> {
    if !frame.contains(pose.position()) || !pose.yaw.is_finite() {
        return Err(Error::PoseOutsideGrid { x: pose.x, y: pose.y });
    }
    let mut out = Vec::with_capacity(tpl.rows * tpl.cols);
    for i in 0..tpl.rows {
        for j in 0..tpl.cols {
            out.push(frame.to_pixel(pose.to_world(tpl.local_point(i, j))));
        }
    }
    Ok(out)
}

/// Bilinear crops `[B, C, rows, cols]` of `f` (`[1, C, H, W]`) at each pose.
pub fn roi_warp<T: Real>(g: &Graph<T>, f: Var, frame: &GridFrame, tpl: &RoiTemplate, poses: &[Pose2]) -> Result<Var> {
    let shape = g.shape(f);
    let n = shape.len();
    if n < 3 || shape[n - 2] != frame.rows || shape[n - 1] != frame.cols || (n == 4 && shape[0] != 1) {
        return Err(Error::GridMismatch(format!("feature shape {shape:?} does not match a {}x{} grid", frame.rows, frame.cols)));
    }
    let mut coords = Vec::with_capacity(poses.len() * tpl.rows * tpl.cols);
    for p in poses {
        coords.extend(roi_coords(frame, tpl, p)?);
    }
    Ok(g.bilinear_sample(f, &coords, poses.len(), tpl.rows, tpl.cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{numeric_grad, rel_error};
    use crate::nn::Tensor;
    use rand::{Rng, SeedableRng};

    fn frame() -> GridFrame {
        GridFrame { x_min: -10.0, y_min: -12.0, cell: 1.0, rows: 24, cols: 40 }
    }

    #[test]
    fn constant_field_gives_constant_crop() {
        let fr = frame();
        let g = Graph::<f64>::new();
        let f = g.constant(Tensor::full(&[1, 2, fr.rows, fr.cols], 3.5));
        let tpl = RoiTemplate { rows: 6, cols: 4, spacing: 1.0, back: 1.0 };
        let r = roi_warp(&g, f, &fr, &tpl, &[Pose2::new(1.0, 0.3, 0.7), Pose2::new(-2.0, 1.0, -2.0)]).unwrap();
        assert!(g.value(r).data.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn aligned_pose_equals_slicing() {
        let fr = frame();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::<f64>::new(&[1, 1, fr.rows, fr.cols], (0..fr.rows * fr.cols).map(|_| rng.random()).collect());
        let g = Graph::new();
        let f = g.constant(t.clone());
        let tpl = RoiTemplate { rows: 6, cols: 4, spacing: 1.0, back: 2.0 };
        // Vehicle at the corner between cells; crop cell (i, j) lands on a grid cell center.
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let r = g.value(roi_warp(&g, f, &fr, &tpl, &[pose]).unwrap());
        for i in 0..tpl.rows {
            for j in 0..tpl.cols {
                let p = tpl.local_point(i, j);
                let (c, rr) = fr.to_pixel(p);
                assert_eq!(r.data[i * tpl.cols + j], t.data[rr.round() as usize * fr.cols + c.round() as usize]);
            }
        }
    }

    #[test]
    fn outside_pose_rejected() {
        let fr = frame();
        let g = Graph::<f64>::new();
        let f = g.constant(Tensor::zeros(&[1, 1, fr.rows, fr.cols]));
        let r = roi_warp(&g, f, &fr, &RoiTemplate::default(), &[Pose2::new(100.0, 0.0, 0.0)]);
        assert!(matches!(r, Err(Error::PoseOutsideGrid { .. })));
    }

    #[test]
    fn crop_gradient_matches_finite_differences() {
        let fr = GridFrame { x_min: -5.0, y_min: -5.0, cell: 1.0, rows: 10, cols: 10 };
        let tpl = RoiTemplate { rows: 4, cols: 3, spacing: 0.8, back: 1.0 };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::new(&[1, 2, 10, 10], (0..200).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w: Vec<f64> = (0..2 * 2 * 12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let poses = [Pose2::new(0.3, -0.7, 0.4), Pose2::new(-1.1, 1.9, -2.2)];
        let eval = |x: &Tensor<f64>| {
            let g = Graph::new();
            let f = g.variable(x.clone());
            let r = roi_warp(&g, f, &fr, &tpl, &poses).unwrap();
            let l = g.sum(g.mul(r, g.constant(Tensor::new(&[2, 2, 4, 3], w.clone()))));
            let v = g.item(l);
            (v, g.backward(l).wrt(f).unwrap().clone())
        };
        let (_, grad) = eval(&x);
        let idx: Vec<usize> = (0..200).collect();
        let num = numeric_grad(&mut |t| eval(t).0, &x, &idx, 1e-3);
        assert!(rel_error(&grad.data, &num) < 1e-4);
    }
}
