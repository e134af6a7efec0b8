//! Sensor-input student: perception backbone plus planner, distilled from the teacher.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matching::match_centers;
use super::privileged::Teacher;
use super::samples::vehicle_samples;
use super::{Regime, Stage, StepMetrics, TrainConfig};
use crate::checkpoint::Checkpoint;
use crate::command::{Command, NUM_COMMANDS};
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::microworld::dataset::FrameSource;
use crate::microworld::recorder::Frame;
use crate::nn::{Adam, Graph, Real, Tensor, Var};
use crate::perception::detect::{decode_detections, DetClass, OrientedBox, DEFAULT_POOL, DEFAULT_THRESHOLD};
use crate::perception::loss::{perception_loss, LossWeights};
use crate::perception::model::{head_maps, HeadMaps, Perception, PerceptionConfig};
use crate::perception::pillars::SparsePillars;
use crate::perception::targets::{build_targets, frame_pillars, PerceptionTargets};
use crate::planner::loss::{loss_cmd_kl, loss_distill_plans, loss_refine};
use crate::planner::model::{plan_sets, refined_plans, PlanSet, Planner, PlannerConfig, RefinedPlan};
use crate::planner::roi::{roi_warp, GridFrame};

pub const CHECKPOINT_KIND: &str = "student";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentConfig {
    pub perception: PerceptionConfig,
    pub planner: PlannerConfig,
}

pub struct Student<T: Real> {
    pub perception: Perception<T>,
    pub planner: Planner<T>,
}

/// Everything the student infers from one sensor frame.
#[derive(Clone, Debug)]
pub struct StudentOutput {
    pub maps: HeadMaps,
    pub detections: Vec<OrientedBox>,
    /// Plans of non-ego vehicle detections, aligned with `others`.
    pub other_plans: Vec<PlanSet>,
    pub others: Vec<OrientedBox>,
    pub ego_plans: PlanSet,
    pub ego_refined: RefinedPlan,
}

impl<T: Real> Student<T> {
    pub fn new(perception: Perception<T>, planner_cfg: PlannerConfig, seed: u64) -> Result<Self> {
        if planner_cfg.in_channels != perception.cfg.grid.channels {
            return Err(Error::Config("student planner input must match the backbone channel count".into()));
        }
        let planner = Planner::new(planner_cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Self { perception, planner })
    }

    pub fn config(&self) -> StudentConfig {
        StudentConfig { perception: self.perception.cfg.clone(), planner: self.planner.cfg.clone() }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::new(
            CHECKPOINT_KIND,
            self.perception.cfg.grid,
            &self.config(),
            vec![("perception".into(), self.perception.store.to_named()), ("planner".into(), self.planner.to_named())],
        )?
        .save(path)
    }

    pub fn load(path: &Path, grid: Option<&crate::bev::GridSpec>) -> Result<Self> {
        let ck = Checkpoint::load(path, CHECKPOINT_KIND, grid)?;
        let cfg: StudentConfig = ck.config()?;
        let mut perception = Perception::new(cfg.perception, &mut ChaCha8Rng::seed_from_u64(0))?;
        perception.store.load_named(ck.part("perception")?).map_err(Error::Encoding)?;
        let planner = Planner::from_named(cfg.planner, ck.part("planner")?)?;
        Ok(Self { perception, planner })
    }

    /// Detection, planning for every detected vehicle and goal-conditioned refinement
    /// of the ego plan under command `cmd`.
    pub fn infer(&self, pillars: &SparsePillars, goal: [f64; 2], cmd: Command, iters: usize) -> Result<StudentOutput> {
        let g = Graph::new();
        let spec = self.perception.cfg.grid;
        let f = self.perception.backbone_forward(&g, &[pillars])?;
        let heads = self.perception.heads_forward(&g, f);
        let maps = head_maps(&g, &heads, 1).remove(0);
        let detections = decode_detections(&maps, &spec, DEFAULT_THRESHOLD, DEFAULT_POOL);
        let grid = GridFrame::features(&spec);
        let others: Vec<OrientedBox> =
            detections.iter().filter(|d| d.class == DetClass::Vehicle && !d.is_ego && grid.contains(d.center)).copied().collect();
        let mut poses = vec![Pose2::default()];
        poses.extend(others.iter().map(|d| d.pose()));
        let rois = roi_warp(&g, f, &grid, &self.planner.cfg.roi, &poses)?;
        let z = self.planner.embed(&g, rois);
        let pv = self.planner.plan(&g, z);
        let mut sets = plan_sets(&g, &pv);
        let ego_plans = sets.remove(0);
        let z_ego = g.narrow(z, 0, 0, 1);
        let plans_ego = g.narrow(pv.plans, 0, 0, 1);
        let coarse = self.planner.select(&g, plans_ego, &[cmd]);
        let r = self.planner.refine(&g, z_ego, coarse, &[goal], iters);
        let ego_refined = refined_plans(&g, &r).remove(0);
        Ok(StudentOutput { maps, detections, other_plans: sets, others, ego_plans, ego_refined })
    }
}

/// Teacher plans expressed in another frame: points of `from`-frame trajectories
/// re-expressed in the `to` frame (both ego-frame poses).
fn reframe(traj: &[[f64; 2]], from: &Pose2, to: &Pose2) -> Vec<[f64; 2]> {
    traj.iter()
        .map(|p| {
            let v = to.to_local(from.to_world(Vec2::new(p[0], p[1])));
            [v.x, v.y]
        })
        .collect()
}

/// Distillation objective of student crops against teacher outputs:
/// L1 on all six command branches plus the KL divergence of the command likelihoods.
pub fn distill_loss<T: Real>(g: &Graph<T>, planner: &Planner<T>, z: Var, teacher: &[PlanSet], cmd_weight: f64) -> (Var, Var, Var) {
    let b = teacher.len();
    let n = planner.cfg.horizon;
    let pv = planner.plan(g, z);
    let mut data = Vec::with_capacity(b * NUM_COMMANDS * n * 2);
    for s in teacher {
        for t in &s.trajectories {
            for p in t {
                data.push(T::of(p[0]));
                data.push(T::of(p[1]));
            }
        }
    }
    let lp = loss_distill_plans(g, pv.plans, &Tensor::new(&[b, NUM_COMMANDS, n, 2], data));
    let probs: Vec<[f64; NUM_COMMANDS]> = teacher.iter().map(|s| s.likelihoods).collect();
    let lc = loss_cmd_kl(g, pv.cmd_logits, &probs);
    (g.add(lp, g.scale(lc, cmd_weight)), lp, lc)
}

/// Teacher plan sets for the given vehicles of a frame.
pub fn teacher_plans<T: Real>(teacher: &Teacher<T>, frame: &Frame, poses: &[Pose2]) -> Result<Vec<PlanSet>> {
    let g = Graph::new();
    let rois = teacher.rois(&g, frame, poses)?;
    let z = teacher.planner.embed(&g, rois);
    Ok(plan_sets(&g, &teacher.planner.plan(&g, z)))
}

/// One distillation step over `frames`. Returns the loss terms and the number of
/// supervised vehicles.
#[allow(clippy::too_many_arguments)]
pub fn distill_step<T: Real>(
    student: &mut Student<T>,
    teacher: &Teacher<T>,
    opt_p: &mut Adam<T>,
    opt_m: &mut Adam<T>,
    frames: &[Frame],
    cfg: &TrainConfig,
) -> Result<(BTreeMap<String, f64>, usize)> {
    let spec = student.perception.cfg.grid;
    if spec != teacher.grid {
        return Err(Error::GridMismatch("teacher and student grids differ".into()));
    }
    let grid = GridFrame::features(&spec);
    let n = student.planner.cfg.horizon;
    let g = Graph::new();
    let pillars: Vec<SparsePillars> = frames.iter().map(|f| frame_pillars(f, &spec, student.perception.cfg.max_points)).collect::<Result<_>>()?;
    let prefs: Vec<&SparsePillars> = pillars.iter().collect();
    let f = student.perception.backbone_forward(&g, &prefs)?;
    let heads = student.perception.heads_forward(&g, f);
    let mut terms = BTreeMap::new();
    let mut total: Option<Var> = None;
    if cfg.regime != Regime::None {
        let targets: Vec<PerceptionTargets> = frames.iter().map(|fr| build_targets(fr, &spec, true)).collect::<Result<_>>()?;
        let trefs: Vec<&PerceptionTargets> = targets.iter().collect();
        let aux = perception_loss(&g, &heads, &trefs, &LossWeights::default())?;
        terms.insert("perception".into(), g.item(aux.total).as_f64());
        total = Some(g.scale(aux.total, cfg.aux_weight));
    }
    let maps = head_maps(&g, &heads, frames.len());
    let mut rois = vec![];
    let mut teacher_sets = vec![];
    let mut ego_rows = vec![];
    let mut ego_meta = vec![];
    for (i, frame) in frames.iter().enumerate() {
        let samples = vehicle_samples(frame, &grid, cfg.vehicle_range, n);
        if samples.is_empty() {
            continue;
        }
        let dets: Vec<OrientedBox> = decode_detections(&maps[i], &spec, DEFAULT_THRESHOLD, DEFAULT_POOL)
            .into_iter()
            .filter(|d| d.class == DetClass::Vehicle && !d.is_ego && grid.contains(d.center))
            .collect();
        let others: Vec<usize> = (0..samples.len()).filter(|&k| !samples[k].is_ego).collect();
        let gt_c: Vec<Vec2> = others.iter().map(|&k| samples[k].pose.position()).collect();
        let det_c: Vec<Vec2> = dets.iter().map(|d| d.center).collect();
        let mut student_pose: Vec<Option<Pose2>> = samples.iter().map(|s| s.is_ego.then_some(s.pose)).collect();
        for (a, b) in match_centers(&gt_c, &det_c, cfg.match_gate) {
            student_pose[others[a]] = Some(dets[b].pose());
        }
        let keep: Vec<usize> = (0..samples.len()).filter(|&k| student_pose[k].is_some()).collect();
        let t_poses: Vec<Pose2> = keep.iter().map(|&k| samples[k].pose).collect();
        let s_poses: Vec<Pose2> = keep.iter().map(|&k| student_pose[k].unwrap()).collect();
        let tp = teacher_plans(teacher, frame, &t_poses)?;
        for (j, &k) in keep.iter().enumerate() {
            let mut set = tp[j].clone();
            if !samples[k].is_ego {
                set.trajectories = set.trajectories.iter().map(|t| reframe(t, &t_poses[j], &s_poses[j])).collect();
            } else {
                ego_rows.push(teacher_sets.len() + j);
                ego_meta.push((samples[k].future.clone(), samples[k].goal.unwrap_or([0.0, 0.0]), samples[k].command.unwrap_or(Command::FollowLane)));
            }
            teacher_sets.push(set);
        }
        let fi = g.narrow(f, 0, i, 1);
        rois.push(roi_warp(&g, fi, &grid, &student.planner.cfg.roi, &s_poses)?);
    }
    let vehicles = teacher_sets.len();
    if vehicles > 0 {
        let rois = if rois.len() == 1 { rois[0] } else { g.concat(&rois, 0) };
        let z = student.planner.embed(&g, rois);
        let (ld, lp, lc) = distill_loss(&g, &student.planner, z, &teacher_sets, cfg.cmd_weight);
        terms.insert("distill_plans".into(), g.item(lp).as_f64());
        terms.insert("distill_cmd".into(), g.item(lc).as_f64());
        total = Some(match total {
            Some(t) => g.add(t, ld),
            None => ld,
        });
        if !ego_rows.is_empty() {
            let pv = student.planner.plan(&g, g.gather_rows(z, &ego_rows));
            let cmds: Vec<Command> = ego_meta.iter().map(|m| m.2).collect();
            let coarse = student.planner.select(&g, pv.plans, &cmds);
            let goals: Vec<[f64; 2]> = ego_meta.iter().map(|m| m.1).collect();
            let ys: Vec<Vec<[f64; 2]>> = ego_meta.iter().map(|m| m.0.clone()).collect();
            let r = student.planner.refine(&g, g.gather_rows(z, &ego_rows), coarse, &goals, cfg.refine_iters);
            if let Some(lr) = loss_refine(&g, &r.trajectories, &ys) {
                terms.insert("refine".into(), g.item(lr).as_f64());
                total = Some(g.add(total.unwrap(), lr));
            }
        }
    }
    let Some(total) = total else { return Ok((terms, 0)) };
    terms.insert("total".into(), g.item(total).as_f64());
    let grads = g.backward(total);
    let gp = grads.for_store(&student.perception.store);
    let gm = grads.for_store(&student.planner.store);
    opt_p.step(&mut student.perception.store, &gp);
    opt_m.step(&mut student.planner.store, &gm);
    Ok((terms, vehicles))
}

/// Distils the teacher into the student on uniformly sampled frames.
pub fn distill_student<T: Real>(student: &mut Student<T>, teacher: &Teacher<T>, data: &(impl FrameSource + ?Sized), cfg: &TrainConfig) -> Result<Vec<StepMetrics>> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("no frames for distillation".into()));
    }
    if student.perception.cfg.grid != teacher.grid {
        return Err(Error::GridMismatch("teacher and student grids differ".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt_p = Adam::new(&student.perception.store, cfg.lr);
    let mut opt_m = Adam::new(&student.planner.store, cfg.lr);
    let start = Instant::now();
    let mut log = vec![];
    for step in 0..cfg.steps {
        let frames: Vec<Frame> = (0..cfg.batch).map(|_| data.frame(rng.random_range(0..data.len()))).collect::<Result<_>>()?;
        let (terms, vehicles) = distill_step(student, teacher, &mut opt_p, &mut opt_m, &frames, cfg)?;
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("distill step {step}: {terms:?} ({vehicles} vehicles)");
        }
        log.push(StepMetrics { step, stage: Stage::Distill, terms, vehicles, wall: start.elapsed().as_secs_f64() });
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bev::GridSpec;
    use crate::distill::raster::PRIV_CHANNELS;
    use crate::perception::targets::tests::sample_frame;
    use crate::planner::model::PlannerConfig;

    fn small_planner_cfg(ch: usize) -> PlannerConfig {
        let mut pc = PlannerConfig::new(ch);
        pc.conv_widths = (8, 16);
        pc.embed_dim = 16;
        pc
    }

    #[test]
    fn weight_copied_student_has_zero_distillation_loss() {
        let f = sample_frame();
        let teacher = Teacher::<f64>::new(GridSpec::desk(), small_planner_cfg(PRIV_CHANNELS), 3).unwrap();
        let mut copy = Planner::<f64>::new(small_planner_cfg(PRIV_CHANNELS), &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        copy.store.copy_from(&teacher.planner.store).unwrap();
        let samples = vehicle_samples(&f, &GridFrame::features(&teacher.grid), 25.0, 10);
        let poses: Vec<Pose2> = samples.iter().map(|s| s.pose).collect();
        let tp = teacher_plans(&teacher, &f, &poses).unwrap();
        let g = Graph::new();
        let z = copy.embed(&g, teacher.rois(&g, &f, &poses).unwrap());
        let (total, plans, cmd) = distill_loss(&g, &copy, z, &tp, 0.1);
        assert_eq!(g.item(plans), 0.0);
        assert!(g.item(cmd).abs() < 1e-12);
        assert!(g.item(total).abs() < 1e-12);
    }

    #[test]
    fn distill_step_updates_backbone_and_respects_regime() {
        let f = sample_frame();
        let mut pcfg = PerceptionConfig::default();
        pcfg.pointnet_width = 8;
        pcfg.stage1_width = 8;
        pcfg.grid.channels = 8;
        let spec8 = pcfg.grid;
        let teacher = Teacher::<f32>::new(spec8, small_planner_cfg(PRIV_CHANNELS), 1).unwrap();
        let perception = Perception::<f32>::new(pcfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut student = Student::new(perception, small_planner_cfg(8), 2).unwrap();
        let before = student.perception.store.to_named();
        let mut cfg = TrainConfig::distill();
        cfg.regime = Regime::None;
        let mut op = Adam::new(&student.perception.store, 1e-3);
        let mut om = Adam::new(&student.planner.store, 1e-3);
        let (terms, vehicles) = distill_step(&mut student, &teacher, &mut op, &mut om, std::slice::from_ref(&f), &cfg).unwrap();
        assert!(vehicles >= 1);
        assert!(!terms.contains_key("perception"));
        assert_ne!(student.perception.store.to_named(), before, "motion gradients must reach the backbone");
        cfg.regime = Regime::Staged;
        let (terms, _) = distill_step(&mut student, &teacher, &mut op, &mut om, &[f], &cfg).unwrap();
        assert!(terms.contains_key("perception"));
    }
}
