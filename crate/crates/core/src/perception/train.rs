//! Supervised training of the perception backbone and heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::rotation_augment;
use super::loss::{perception_loss, LossBreakdown, LossWeights};
use super::model::Perception;
use super::pillars::SparsePillars;
use super::targets::{build_targets, frame_pillars, PerceptionTargets};
use crate::bev::GridSpec;
use crate::error::Result;
use crate::microworld::dataset::FrameSource;
use crate::microworld::recorder::Frame;
use crate::nn::{Adam, Graph, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerceptionTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Probability of rotating a training frame.
    pub rotate_prob: f64,
    pub theta_max: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for PerceptionTrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 2,
            lr: 1e-3,
            rotate_prob: 0.5,
            theta_max: std::f64::consts::PI,
            weights: LossWeights::default(),
            seed: 0,
            log_every: 100,
        }
    }
}

/// Pillars and targets of one (optionally rotated) frame.
pub fn prepare_sample(frame: &Frame, spec: &GridSpec, max_points: usize, theta: f64) -> Result<(SparsePillars, PerceptionTargets)> {
    let f = rotation_augment(frame, theta, spec);
    Ok((frame_pillars(&f, spec, max_points)?, build_targets(&f, spec, true)?))
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn perception_step<T: Real>(
    model: &mut Perception<T>,
    opt: &mut Adam<T>,
    batch: &[(SparsePillars, PerceptionTargets)],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let g = Graph::new();
    let pillars: Vec<&SparsePillars> = batch.iter().map(|b| &b.0).collect();
    let targets: Vec<&PerceptionTargets> = batch.iter().map(|b| &b.1).collect();
    let f = model.backbone_forward(&g, &pillars)?;
    let heads = model.heads_forward(&g, f);
    let loss = perception_loss(&g, &heads, &targets, weights)?;
    let grads = g.backward(loss.total);
    let grads = grads.for_store(&model.store);
    opt.step(&mut model.store, &grads);
    Ok(loss.values(&g))
}

/// Trains on uniformly sampled frames with random rotations. Returns the loss history.
pub fn train_perception<T: Real>(model: &mut Perception<T>, data: &(impl FrameSource + ?Sized), cfg: &PerceptionTrainConfig) -> Result<Vec<LossBreakdown>> {
    if data.is_empty() {
        return Err(crate::Error::InvalidArgument("no frames to train perception on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(&model.store, cfg.lr);
    let spec = model.cfg.grid;
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let frame = data.frame(rng.random_range(0..data.len()))?;
            let theta = if rng.random_bool(cfg.rotate_prob.clamp(0.0, 1.0)) { rng.random_range(-cfg.theta_max..=cfg.theta_max) } else { 0.0 };
            batch.push(prepare_sample(&frame, &spec, model.cfg.max_points, theta)?);
        }
        let l = perception_step(model, &mut opt, &batch, &cfg.weights)?;
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("perception step {step}: total {:.4} center {:.4} orient {:.4} box {:.4} sem {:.4}", l.total, l.center, l.orient, l.boxes, l.semantic);
        }
        history.push(l);
    }
    Ok(history)
}
