//! Privileged planner trained on ground-truth map-view inputs of every nearby vehicle.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::raster::{rasterize_gt, PRIV_CHANNELS};
use super::samples::{vehicle_samples, VehicleSample};
use super::{Stage, StepMetrics, TrainConfig};
use crate::bev::GridSpec;
use crate::checkpoint::Checkpoint;
use crate::command::Command;
use crate::error::{Error, Result};
use crate::microworld::dataset::FrameSource;
use crate::microworld::recorder::Frame;
use crate::nn::{Adam, Graph, Real, Tensor, Var};
use crate::planner::loss::{loss_cmd, loss_ego, loss_other, loss_refine, motion_loss};
use crate::planner::model::{Planner, PlannerConfig};
use crate::planner::roi::{roi_warp, GridFrame};

pub const CHECKPOINT_KIND: &str = "teacher";

/// Privileged planner together with the grid its inputs are rasterized on.
pub struct Teacher<T: Real> {
    pub planner: Planner<T>,
    pub grid: GridSpec,
}

impl<T: Real> Teacher<T> {
    pub fn new(grid: GridSpec, cfg: PlannerConfig, seed: u64) -> Result<Self> {
        if cfg.in_channels != PRIV_CHANNELS {
            return Err(Error::Config(format!("privileged planner takes {PRIV_CHANNELS} input channels")));
        }
        Ok(Self { planner: Planner::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed))?, grid })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::new(CHECKPOINT_KIND, self.grid, &self.planner.cfg, vec![(CHECKPOINT_KIND.into(), self.planner.to_named())])?.save(path)
    }

    pub fn load(path: &Path, grid: Option<&GridSpec>) -> Result<Self> {
        let ck = Checkpoint::load(path, CHECKPOINT_KIND, grid)?;
        Ok(Self { planner: Planner::from_named(ck.config()?, ck.part(CHECKPOINT_KIND)?)?, grid: ck.grid })
    }

    /// Ground-truth crops `[B, 7, rows, cols]` at the given ego-frame poses.
    pub fn rois(&self, g: &Graph<T>, frame: &Frame, poses: &[crate::geometry::Pose2]) -> Result<Var> {
        let raster = rasterize_gt(frame, &self.grid);
        let t = Tensor::new(&[1, PRIV_CHANNELS, self.grid.rows(), self.grid.cols()], raster.iter().map(|&v| T::of(v as f64)).collect());
        roi_warp(g, g.constant(t), &GridFrame::pillars(&self.grid), &self.planner.cfg.roi, poses)
    }
}

/// Loss graph of the privileged objective over a batch of vehicle crops.
/// Returns `None` when the batch holds no usable vehicle.
pub fn privileged_loss<T: Real>(
    g: &Graph<T>,
    planner: &Planner<T>,
    rois: Var,
    samples: &[VehicleSample],
    cfg: &TrainConfig,
) -> Option<(Var, BTreeMap<String, f64>)> {
    if samples.is_empty() {
        return None;
    }
    let n = planner.cfg.horizon;
    let z = planner.embed(g, rois);
    let pv = planner.plan(g, z);
    let flat = g.reshape(pv.plans, &[samples.len(), 12 * n]);
    let ego: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].is_ego).collect();
    let other: Vec<usize> = (0..samples.len()).filter(|&i| !samples[i].is_ego).collect();
    let mut terms = BTreeMap::new();
    let mut labels = vec![Command::FollowLane; samples.len()];
    let (mut l_ego, mut l_other, mut l_ref) = (None, None, None);
    if !ego.is_empty() {
        let plans = g.reshape(g.gather_rows(flat, &ego), &[ego.len(), 6, n, 2]);
        let ys: Vec<_> = ego.iter().map(|&i| samples[i].future.clone()).collect();
        let cmds: Vec<Command> = ego.iter().map(|&i| samples[i].command.unwrap_or(Command::FollowLane)).collect();
        for (&i, &c) in ego.iter().zip(&cmds) {
            labels[i] = c;
        }
        let le = loss_ego(g, plans, &ys, &cmds);
        terms.insert("ego".into(), g.item(le).as_f64());
        l_ego = Some(le);
        let goals: Vec<_> = ego.iter().map(|&i| samples[i].goal.unwrap_or([0.0, 0.0])).collect();
        let coarse = planner.select(g, plans, &cmds);
        let r = planner.refine(g, g.gather_rows(z, &ego), coarse, &goals, cfg.refine_iters);
        if let Some(lr) = loss_refine(g, &r.trajectories, &ys) {
            terms.insert("refine".into(), g.item(lr).as_f64());
            l_ref = Some(lr);
        }
    }
    if !other.is_empty() {
        let plans = g.reshape(g.gather_rows(flat, &other), &[other.len(), 6, n, 2]);
        let ys: Vec<_> = other.iter().map(|&i| samples[i].future.clone()).collect();
        let (lo, arg) = loss_other(g, plans, &ys);
        for (&i, c) in other.iter().zip(arg) {
            labels[i] = c;
        }
        terms.insert("other".into(), g.item(lo).as_f64());
        l_other = Some(lo);
    }
    let lc = loss_cmd(g, pv.cmd_logits, &labels);
    terms.insert("cmd".into(), g.item(lc).as_f64());
    let mut total = motion_loss(g, l_ego, l_other, Some(lc), cfg.other_weight, cfg.cmd_weight)?;
    if let Some(lr) = l_ref {
        total = g.add(total, lr);
    }
    terms.insert("total".into(), g.item(total).as_f64());
    Some((total, terms))
}

/// Crops and samples for a list of frames.
pub fn gather_batch<T: Real>(g: &Graph<T>, teacher: &Teacher<T>, frames: &[Frame], range: f64) -> Result<(Option<Var>, Vec<VehicleSample>)> {
    let grid = GridFrame::features(&teacher.grid);
    let mut rois = vec![];
    let mut samples = vec![];
    for f in frames {
        let s = vehicle_samples(f, &grid, range, teacher.planner.cfg.horizon);
        if s.is_empty() {
            continue;
        }
        let poses: Vec<_> = s.iter().map(|v| v.pose).collect();
        rois.push(teacher.rois(g, f, &poses)?);
        samples.extend(s);
    }
    let rois = match rois.len() {
        0 => None,
        1 => Some(rois[0]),
        _ => Some(g.concat(&rois, 0)),
    };
    Ok((rois, samples))
}

/// One optimizer step over the vehicles of `frames`; `None` if none were usable.
pub fn privileged_step<T: Real>(teacher: &mut Teacher<T>, opt: &mut Adam<T>, frames: &[Frame], cfg: &TrainConfig) -> Result<Option<(BTreeMap<String, f64>, usize)>> {
    let g = Graph::new();
    let (rois, samples) = gather_batch(&g, teacher, frames, cfg.vehicle_range)?;
    let Some(rois) = rois else { return Ok(None) };
    let Some((loss, terms)) = privileged_loss(&g, &teacher.planner, rois, &samples, cfg) else { return Ok(None) };
    let grads = g.backward(loss).for_store(&teacher.planner.store);
    opt.step(&mut teacher.planner.store, &grads);
    Ok(Some((terms, samples.len())))
}

/// Trains the privileged planner. Each step walks a shuffled frame order until the
/// vehicle count reaches `cfg.batch` or every frame has been used once.
pub fn train_privileged<T: Real>(teacher: &mut Teacher<T>, data: &(impl FrameSource + ?Sized), cfg: &TrainConfig) -> Result<Vec<StepMetrics>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no frames for privileged training".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut opt = Adam::new(&teacher.planner.store, cfg.lr);
    let grid = GridFrame::features(&teacher.grid);
    let start = Instant::now();
    let mut log = vec![];
    for step in 0..cfg.steps {
        let mut frames = vec![];
        let mut count = 0;
        while count < cfg.batch && frames.len() < data.len() {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let f = data.frame(order[cursor])?;
            cursor += 1;
            count += vehicle_samples(&f, &grid, cfg.vehicle_range, teacher.planner.cfg.horizon).len();
            frames.push(f);
        }
        match privileged_step(teacher, &mut opt, &frames, cfg)? {
            Some((terms, vehicles)) => {
                if cfg.log_every > 0 && step % cfg.log_every == 0 {
                    log::info!("privileged step {step}: {terms:?} ({vehicles} vehicles)");
                }
                log.push(StepMetrics { step, stage: Stage::Privileged, terms, vehicles, wall: start.elapsed().as_secs_f64() });
            }
            None => log::warn!("privileged step {step}: no usable vehicles, batch skipped"),
        }
    }
    Ok(log)
}
