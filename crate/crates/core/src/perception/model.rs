//! Pillar encoder, multi-scale convolutional backbone and the dense prediction heads.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pillars::{SparsePillars, DEFAULT_MAX_POINTS, POINT_FEATURES};
use crate::bev::GridSpec;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Graph, Linear, ParamStore, Real, Tensor, UpConv2d, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionConfig {
    pub grid: GridSpec,
    pub pointnet_width: usize,
    /// Width of the full-resolution stage; the strided stages use the grid's channel count.
    pub stage1_width: usize,
    pub head_width: usize,
    pub max_points: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self { grid: GridSpec::desk(), pointnet_width: 32, stage1_width: 32, head_width: 16, max_points: DEFAULT_MAX_POINTS }
    }
}

/// Channel counts of the head outputs.
pub const CENTER_CH: usize = 2;
pub const ORIENT_CH: usize = 2;
pub const BOX_CH: usize = 2;
pub const SEM_CH: usize = 3;

/// Input scaling of the per-point features.
fn feature_scale(spec: &GridSpec) -> [f32; POINT_FEATURES] {
    let p = 1.0 / spec.pillar_size as f32;
    [0.1, 0.1, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, p, p]
}

#[derive(Clone, Debug)]
struct Head {
    conv: Conv2d,
    up: UpConv2d,
}

impl Head {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, c_in: usize, width: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self { conv: Conv2d::new(store, &format!("{name}.conv"), c_in, width, 3, 1, rng), up: UpConv2d::new(store, &format!("{name}.up"), width, c_out, rng) }
    }

    fn forward<T: Real>(&self, g: &Graph<T>, ps: &ParamStore<T>, f: Var) -> Var {
        let h = g.relu(self.conv.forward(g, ps, f));
        self.up.forward(g, ps, h)
    }
}

/// Head outputs as graph nodes, all `[N, ch, rows, cols]` at pillar resolution.
#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub center_logits: Var,
    pub orient: Var,
    pub boxes: Var,
    pub sem_logits: Var,
}

/// Per-frame head outputs as plain arrays, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadMaps {
    pub rows: usize,
    pub cols: usize,
    /// Vehicle and pedestrian centerness in (0, 1).
    pub center: Vec<f32>,
    /// Raw (sin, cos) of the heading.
    pub orient: Vec<f32>,
    /// Log half-length and log half-width.
    pub boxes: Vec<f32>,
    /// Road, solid and broken probabilities.
    pub semantic: Vec<f32>,
}

impl HeadMaps {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let hw = rows * cols;
        Self { rows, cols, center: vec![0.0; CENTER_CH * hw], orient: vec![0.0; ORIENT_CH * hw], boxes: vec![0.0; BOX_CH * hw], semantic: vec![0.0; SEM_CH * hw] }
    }

    pub fn idx(&self, ch: usize, row: usize, col: usize) -> usize {
        (ch * self.rows + row) * self.cols + col
    }
}

pub struct Perception<T: Real> {
    pub cfg: PerceptionConfig,
    pub store: ParamStore<T>,
    pn1: Linear,
    pn2: Linear,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    skip: Conv2d,
    center: Head,
    orient: Head,
    boxes: Head,
    semantic: Head,
}

impl<T: Real> Perception<T> {
    pub fn new(cfg: PerceptionConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.grid.validate()?;
        if cfg.grid.out_stride != 2 {
            return Err(Error::InvalidArgument("the backbone downsamples exactly once; out_stride must be 2".into()));
        }
        let mut s = ParamStore::new();
        let (pw, w1, c) = (cfg.pointnet_width, cfg.stage1_width, cfg.grid.channels);
        let pn1 = Linear::new(&mut s, "pointnet.fc1", POINT_FEATURES, pw, rng);
        let pn2 = Linear::new(&mut s, "pointnet.fc2", pw, pw, rng);
        let conv1 = Conv2d::new(&mut s, "backbone.stage1", pw, w1, 3, 1, rng);
        let conv2 = Conv2d::new(&mut s, "backbone.stage2", w1, c, 3, 2, rng);
        let conv3 = Conv2d::new(&mut s, "backbone.stage3", c, c, 3, 1, rng);
        let skip = Conv2d::new(&mut s, "backbone.skip", w1, c, 1, 2, rng);
        let hw = cfg.head_width;
        let center = Head::new(&mut s, "head.center", c, hw, CENTER_CH, rng);
        let orient = Head::new(&mut s, "head.orient", c, hw, ORIENT_CH, rng);
        let boxes = Head::new(&mut s, "head.box", c, hw, BOX_CH, rng);
        let semantic = Head::new(&mut s, "head.semantic", c, hw, SEM_CH, rng);
        // Low initial centerness keeps the focal loss stable early on.
        *s.get_mut(center.up.b) = Tensor::full(&[CENTER_CH], T::of(-2.19));
        Ok(Self { cfg, store: s, pn1, pn2, conv1, conv2, conv3, skip, center, orient, boxes, semantic })
    }

    /// Same architecture with parameters cast to another precision.
    pub fn cast<U: Real>(&self) -> Perception<U> {
        Perception {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            pn1: self.pn1.clone(),
            pn2: self.pn2.clone(),
            conv1: self.conv1.clone(),
            conv2: self.conv2.clone(),
            conv3: self.conv3.clone(),
            skip: self.skip.clone(),
            center: self.center.clone(),
            orient: self.orient.clone(),
            boxes: self.boxes.clone(),
            semantic: self.semantic.clone(),
        }
    }

    /// Dense pillar features `[1, F, rows, cols]` of one frame.
    fn encode(&self, g: &Graph<T>, p: &SparsePillars) -> Var {
        let spec = &self.cfg.grid;
        let (rows, cols) = (spec.rows(), spec.cols());
        let f = self.cfg.pointnet_width;
        if p.pillars.is_empty() {
            return g.constant(Tensor::zeros(&[1, f, rows, cols]));
        }
        let (feats, seg, cells) = p.flatten();
        let scale = feature_scale(spec);
        let n = seg.len();
        let data: Vec<T> = feats.iter().enumerate().map(|(i, &v)| T::of((v * scale[i % POINT_FEATURES]) as f64)).collect();
        let x = g.constant(Tensor::new(&[n, POINT_FEATURES], data));
        let h = g.relu(self.pn1.forward(g, &self.store, x));
        let h = g.relu(self.pn2.forward(g, &self.store, h));
        let pooled = g.segment_max(h, &seg, cells.len());
        g.scatter_grid(pooled, &cells, rows, cols)
    }

    /// Feature grid `f` of shape `[N, C, out_rows, out_cols]`.
    pub fn backbone_forward(&self, g: &Graph<T>, batch: &[&SparsePillars]) -> Result<Var> {
        for p in batch {
            if p.spec != self.cfg.grid {
                return Err(Error::GridMismatch(format!("pillars built for {:?}, model expects {:?}", p.spec, self.cfg.grid)));
            }
        }
        let dense: Vec<Var> = batch.iter().map(|p| self.encode(g, p)).collect();
        let x = if dense.len() == 1 { dense[0] } else { g.concat(&dense, 0) };
        let h1 = g.relu(self.conv1.forward(g, &self.store, x));
        let h2 = g.relu(self.conv2.forward(g, &self.store, h1));
        let h3 = self.conv3.forward(g, &self.store, h2);
        let s = self.skip.forward(g, &self.store, h1);
        Ok(g.relu(g.add(h3, s)))
    }

    pub fn heads_forward(&self, g: &Graph<T>, f: Var) -> HeadVars {
        HeadVars {
            center_logits: self.center.forward(g, &self.store, f),
            orient: self.orient.forward(g, &self.store, f),
            boxes: self.boxes.forward(g, &self.store, f),
            sem_logits: self.semantic.forward(g, &self.store, f),
        }
    }

    /// Runs backbone and heads without gradients and returns per-frame maps.
    pub fn predict(&self, batch: &[&SparsePillars]) -> Result<Vec<HeadMaps>> {
        let g = Graph::new();
        let f = self.backbone_forward(&g, batch)?;
        let h = self.heads_forward(&g, f);
        Ok(head_maps(&g, &h, batch.len()))
    }
}

/// Converts head nodes to probability maps, one per batch element.
pub fn head_maps<T: Real>(g: &Graph<T>, h: &HeadVars, n: usize) -> Vec<HeadMaps> {
    let c = g.value(h.center_logits);
    let (rows, cols) = (c.shape[2], c.shape[3]);
    let hw = rows * cols;
    let o = g.value(h.orient);
    let b = g.value(h.boxes);
    let s = g.value(h.sem_logits);
    let sig = |v: T| crate::nn::graph::sigmoid(v).as_f64() as f32;
    (0..n)
        .map(|i| HeadMaps {
            rows,
            cols,
            center: c.data[i * CENTER_CH * hw..(i + 1) * CENTER_CH * hw].iter().map(|&v| sig(v)).collect(),
            orient: o.data[i * ORIENT_CH * hw..(i + 1) * ORIENT_CH * hw].iter().map(|v| v.as_f64() as f32).collect(),
            boxes: b.data[i * BOX_CH * hw..(i + 1) * BOX_CH * hw].iter().map(|v| v.as_f64() as f32).collect(),
            semantic: s.data[i * SEM_CH * hw..(i + 1) * SEM_CH * hw].iter().map(|&v| sig(v)).collect(),
        })
        .collect()
}

impl<T: Real> Perception<T> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::new(CHECKPOINT_KIND, self.cfg.grid, &self.cfg, vec![(CHECKPOINT_KIND.into(), self.store.to_named())])
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg: PerceptionConfig = ck.config()?;
        let mut m = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        m.store.load_named(ck.part(CHECKPOINT_KIND)?).map_err(Error::Encoding)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    /// Loads a checkpoint; a grid other than `grid` (when given) is rejected.
    pub fn load(path: &Path, grid: Option<&GridSpec>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, CHECKPOINT_KIND, grid)?)
    }
}

pub const CHECKPOINT_KIND: &str = "perception";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::pillars::{pillarize, PaintedPoint, PAINTED_DIM};
    use rand::SeedableRng;

    fn small_cfg() -> PerceptionConfig {
        PerceptionConfig {
            grid: GridSpec { x_min: -4.0, x_max: 4.0, y_min: -4.0, y_max: 4.0, pillar_size: 0.5, out_stride: 2, channels: 8 },
            pointnet_width: 6,
            stage1_width: 6,
            head_width: 4,
            max_points: 16,
        }
    }

    fn cloud(rng: &mut impl Rng, n: usize) -> Vec<PaintedPoint> {
        (0..n)
            .map(|_| {
                let mut p = [0.0; PAINTED_DIM];
                p[0] = rng.random_range(-4.0..4.0);
                p[1] = rng.random_range(-4.0..4.0);
                p[2] = rng.random_range(0.0..2.0);
                p[3] = 1.0;
                p[4 + rng.random_range(0..5)] = 1.0;
                p
            })
            .collect()
    }

    fn features(m: &Perception<f64>, p: &SparsePillars) -> Vec<f64> {
        let g = Graph::new();
        let f = m.backbone_forward(&g, &[p]).unwrap();
        g.value(f).data.clone()
    }

    #[test]
    fn desk_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Perception::<f32>::new(PerceptionConfig::default(), &mut rng).unwrap();
        let p = pillarize(&cloud(&mut rng, 50), &m.cfg.grid, 16);
        let g = Graph::new();
        let f = m.backbone_forward(&g, &[&p]).unwrap();
        assert_eq!(g.shape(f), vec![1, 64, 80, 80]);
        let h = m.heads_forward(&g, f);
        for (v, c) in [(h.center_logits, 2), (h.orient, 2), (h.boxes, 2), (h.sem_logits, 3)] {
            assert_eq!(g.shape(v), vec![1, c, 160, 160]);
        }
        let maps = head_maps(&g, &h, 1);
        assert!(maps[0].center.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn empty_pillars_give_finite_bias_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Perception::<f64>::new(small_cfg(), &mut rng).unwrap();
        let p = pillarize(&[], &m.cfg.grid, 16);
        assert!(features(&m, &p).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn duplicate_point_leaves_features_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Perception::<f64>::new(small_cfg(), &mut rng).unwrap();
        let mut pts = cloud(&mut rng, 30);
        let a = features(&m, &pillarize(&pts, &m.cfg.grid, 64));
        pts.push(pts[3]);
        let b = features(&m, &pillarize(&pts, &m.cfg.grid, 64));
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_grid_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Perception::<f64>::new(small_cfg(), &mut rng).unwrap();
        let p = pillarize(&[], &GridSpec::desk(), 16);
        let g = Graph::new();
        assert!(matches!(m.backbone_forward(&g, &[&p]), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_grid_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = Perception::<f32>::new(small_cfg(), &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        m.save(&path).unwrap();
        let back = Perception::<f32>::load(&path, Some(&small_cfg().grid)).unwrap();
        assert_eq!(back.store.to_named(), m.store.to_named());
        assert!(matches!(Perception::<f32>::load(&path, Some(&GridSpec::desk())), Err(Error::GridMismatch(_))));
        assert!(matches!(Perception::<f32>::load(&dir.path().join("none"), None), Err(Error::CheckpointNotFound(_))));
    }
}
