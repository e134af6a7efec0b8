//! Detection and semantic-mapping losses.

use serde::{Deserialize, Serialize};

use super::model::{HeadVars, CENTER_CH, SEM_CH};
use super::targets::PerceptionTargets;
use crate::error::{Error, Result};
use crate::nn::{Graph, Real, Tensor, Var};

pub const FOCAL_ALPHA: i32 = 2;
pub const FOCAL_BETA: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub center: f64,
    pub regression: f64,
    pub semantic: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { center: 1.0, regression: 1.0, semantic: 1.0 }
    }
}

/// Graph nodes of the individual terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub total: Var,
    pub center: Var,
    pub orient: Var,
    pub boxes: Var,
    pub semantic: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub center: f64,
    pub orient: f64,
    pub boxes: f64,
    pub semantic: f64,
}

impl LossTerms {
    pub fn values<T: Real>(&self, g: &Graph<T>) -> LossBreakdown {
        LossBreakdown {
            total: g.item(self.total).as_f64(),
            center: g.item(self.center).as_f64(),
            orient: g.item(self.orient).as_f64(),
            boxes: g.item(self.boxes).as_f64(),
            semantic: g.item(self.semantic).as_f64(),
        }
    }
}

/// L1 between two-channel head output and regression targets at center cells, summed.
fn reg_l1<T: Real>(g: &Graph<T>, x: Var, targets: &[&PerceptionTargets], offset: usize) -> Var {
    let shape = g.shape(x);
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let flat = g.reshape(x, &[shape.iter().product(), 1]);
    let mut idx = vec![];
    let mut tv = vec![];
    for (n, t) in targets.iter().enumerate() {
        for r in &t.regression {
            for k in 0..2 {
                idx.push(((n * c + k) * h + r.row) * w + r.col);
                tv.push(T::of(r.values[offset + k] as f64));
            }
        }
    }
    if idx.is_empty() {
        return g.scale(g.sum(flat), 0.0);
    }
    let picked = g.gather_rows(flat, &idx);
    let tgt = g.constant(Tensor::new(&[idx.len(), 1], tv));
    g.sum(g.abs(g.sub(picked, tgt)))
}

/// Focal loss on centerness normalized by the number of objects, L1 on
/// orientation and extent at object centers with the same normalization, and
/// mean semantic BCE over labelled cells.
pub fn perception_loss<T: Real>(g: &Graph<T>, heads: &HeadVars, targets: &[&PerceptionTargets], w: &LossWeights) -> Result<LossTerms> {
    let shape = g.shape(heads.center_logits);
    let (n, h, wd) = (shape[0], shape[2], shape[3]);
    if n != targets.len() {
        return Err(Error::InvalidArgument(format!("{n} predictions but {} targets", targets.len())));
    }
    for t in targets {
        if t.rows != h || t.cols != wd {
            return Err(Error::GridMismatch(format!("targets are {}x{}, maps are {h}x{wd}", t.rows, t.cols)));
        }
    }
    let hw = h * wd;
    let cast = |v: &[f32]| v.iter().map(|&x| T::of(x as f64)).collect::<Vec<T>>();
    let center_t: Vec<T> = targets.iter().flat_map(|t| cast(&t.center)).collect();
    let num_pos: usize = targets.iter().map(|t| t.regression.len()).sum();
    let norm = 1.0 / num_pos.max(1) as f64;
    let center = g.scale(g.focal_loss_sum(heads.center_logits, &Tensor::new(&[n, CENTER_CH, h, wd], center_t), FOCAL_ALPHA, FOCAL_BETA), norm);
    let orient = g.scale(reg_l1(g, heads.orient, targets, 0), norm);
    let boxes = g.scale(reg_l1(g, heads.boxes, targets, 2), norm);
    let sem_t: Vec<T> = targets.iter().flat_map(|t| cast(&t.semantic)).collect();
    let sem_w: Vec<T> = targets.iter().flat_map(|t| cast(&t.semantic_weight)).collect();
    let labelled: f64 = targets.iter().map(|t| t.semantic_weight.iter().map(|&v| v as f64).sum::<f64>()).sum();
    debug_assert_eq!(sem_t.len(), n * SEM_CH * hw);
    let semantic = g.scale(g.bce_with_logits_sum(heads.sem_logits, &Tensor::new(&[n, SEM_CH, h, wd], sem_t), &sem_w), 1.0 / labelled.max(1.0));
    let total = g.add(
        g.add(g.scale(center, w.center), g.scale(g.add(orient, boxes), w.regression)),
        g.scale(semantic, w.semantic),
    );
    Ok(LossTerms { total, center, orient, boxes, semantic })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::GridSpec;
    use crate::geometry::Vec2;
    use crate::nn::gradcheck::{numeric_grad, rel_error};
    use crate::perception::detect::{DetClass, OrientedBox};
    use rand::{Rng, SeedableRng};

    fn small_spec() -> GridSpec {
        GridSpec { x_min: -2.0, x_max: 4.0, y_min: -3.0, y_max: 3.0, pillar_size: 0.5, out_stride: 2, channels: 4 }
    }

    fn targets(spec: &GridSpec, rng: &mut impl Rng) -> PerceptionTargets {
        let boxes = vec![
            OrientedBox { center: Vec2::ZERO, yaw: 0.0, half_length: 2.25, half_width: 1.0, class: DetClass::Vehicle, score: 1.0, is_ego: true },
            OrientedBox {
                center: Vec2::new(2.1, -1.3),
                yaw: rng.random_range(-3.0..3.0),
                half_length: 0.3,
                half_width: 0.3,
                class: DetClass::Pedestrian,
                score: 1.0,
                is_ego: false,
            },
        ];
        let hw = spec.rows() * spec.cols();
        let sem = (0..3 * hw).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
        let wt = (0..3 * hw).map(|i| if i % 7 == 0 { 0.0 } else { 1.0 }).collect();
        PerceptionTargets::from_boxes(boxes, sem, wt, spec)
    }

    fn eval(spec: &GridSpec, t: &PerceptionTargets, logits: [&Tensor<f64>; 4]) -> (f64, Vec<Tensor<f64>>) {
        let g = Graph::<f64>::new();
        let v: Vec<Var> = logits.iter().map(|&x| g.variable(x.clone())).collect();
        let heads = HeadVars { center_logits: v[0], orient: v[1], boxes: v[2], sem_logits: v[3] };
        let l = perception_loss(&g, &heads, &[t], &LossWeights::default()).unwrap();
        let grads = g.backward(l.total);
        let _ = spec;
        (g.item(l.total), v.iter().map(|&x| grads.wrt(x).unwrap().clone()).collect())
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (h, w) = (spec.rows(), spec.cols());
        for _ in 0..3 {
            let t = targets(&spec, &mut rng);
            let mk = |c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                Tensor::<f64>::new(&[1, c, h, w], (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect())
            };
            let ts = [mk(2, &mut rng), mk(2, &mut rng), mk(2, &mut rng), mk(3, &mut rng)];
            let (_, grads) = eval(&spec, &t, [&ts[0], &ts[1], &ts[2], &ts[3]]);
            for k in 0..4 {
                let idx: Vec<usize> = (0..12).map(|_| rng.random_range(0..ts[k].len())).collect();
                let mut f = |x: &Tensor<f64>| {
                    let mut a = ts.clone();
                    a[k] = x.clone();
                    eval(&spec, &t, [&a[0], &a[1], &a[2], &a[3]]).0
                };
                let num = numeric_grad(&mut f, &ts[k], &idx, 1e-3);
                let ana: Vec<f64> = idx.iter().map(|&i| grads[k].data[i]).collect();
                let e = rel_error(&ana, &num);
                assert!(e < 1e-4, "head {k}: rel err {e}");
            }
        }
    }

    #[test]
    fn perfect_predictions_zero_regression() {
        let spec = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = targets(&spec, &mut rng);
        let (h, w) = (spec.rows(), spec.cols());
        let mut o = Tensor::<f64>::zeros(&[1, 2, h, w]);
        let mut b = Tensor::<f64>::zeros(&[1, 2, h, w]);
        for r in &t.regression {
            for k in 0..2 {
                o.data[(k * h + r.row) * w + r.col] = r.values[k] as f64;
                b.data[(k * h + r.row) * w + r.col] = r.values[2 + k] as f64;
            }
        }
        let sem = Tensor::<f64>::new(&[1, 3, h, w], t.semantic.iter().map(|&v| if v > 0.5 { 20.0 } else { -20.0 }).collect());
        let c = Tensor::<f64>::zeros(&[1, 2, h, w]);
        let g = Graph::<f64>::new();
        let heads = HeadVars { center_logits: g.constant(c), orient: g.constant(o), boxes: g.constant(b), sem_logits: g.constant(sem) };
        let l = perception_loss(&g, &heads, &[&t], &LossWeights::default()).unwrap().values(&g);
        assert!(l.orient < 1e-6 && l.boxes < 1e-6);
        assert!(l.semantic < 1e-8);
    }

    #[test]
    fn grid_mismatch_rejected() {
        let spec = small_spec();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let t = targets(&spec, &mut rng);
        let g = Graph::<f64>::new();
        let z = |c| g.constant(Tensor::zeros(&[1, c, 4, 4]));
        let heads = HeadVars { center_logits: z(2), orient: z(2), boxes: z(2), sem_logits: z(3) };
        assert!(matches!(perception_loss(&g, &heads, &[&t], &LossWeights::default()), Err(Error::GridMismatch(_))));
    }
}
