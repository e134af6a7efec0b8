//! ROI embedding, per-command recurrent decoders, command likelihoods and the
//! goal-conditioned refinement unit.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::roi::RoiTemplate;
use crate::checkpoint::Checkpoint;
use crate::command::{Command, NUM_COMMANDS};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Graph, GruCell, Linear, ParamStore, Real, Tensor, Var};

/// Scale applied to waypoints and goals fed back into the recurrent units.
const POS_SCALE: f64 = 0.1;
/// Goals beyond this range (m) are clamped before conditioning.
const GOAL_CLAMP: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub in_channels: usize,
    pub roi: RoiTemplate,
    pub conv_widths: (usize, usize),
    /// Embedding size; also the hidden size of every recurrent unit.
    pub embed_dim: usize,
    pub horizon: usize,
    pub refine_iters: usize,
    /// Command names in output order; fixed.
    pub commands: Vec<String>,
}

impl PlannerConfig {
    pub fn new(in_channels: usize) -> Self {
        Self {
            in_channels,
            roi: RoiTemplate::default(),
            conv_widths: (32, 64),
            embed_dim: 128,
            horizon: 10,
            refine_iters: 5,
            commands: Command::names(),
        }
    }
}

#[derive(Clone, Debug)]
struct Branch {
    gru: GruCell,
    out: Linear,
}

/// Outputs of the coarse planner for a batch of `B` vehicles.
#[derive(Clone, Copy, Debug)]
pub struct PlanVars {
    /// `[B, 6, n, 2]` waypoints in each vehicle's frame.
    pub plans: Var,
    /// `[B, 6]` command logits.
    pub cmd_logits: Var,
}

/// Refinement rollout: the trajectory after each iteration and the residuals.
#[derive(Clone, Debug)]
pub struct RefineVars {
    /// `[B, n, 2]` per iteration; element 0 is the detached coarse plan.
    pub trajectories: Vec<Var>,
    pub residuals: Vec<Var>,
}

impl RefineVars {
    pub fn last(&self) -> Var {
        *self.trajectories.last().expect("refinement keeps the coarse plan")
    }
}

pub struct Planner<T: Real> {
    pub cfg: PlannerConfig,
    pub store: ParamStore<T>,
    conv1: Conv2d,
    conv2: Conv2d,
    proj: Linear,
    branches: Vec<Branch>,
    cls: Linear,
    refine_gru: GruCell,
    refine_out: Linear,
}

impl<T: Real> Planner<T> {
    pub fn new(cfg: PlannerConfig, rng: &mut impl Rng) -> Result<Self> {
        if cfg.commands != Command::names() {
            return Err(Error::Config("planner command order must be the fixed six-command order".into()));
        }
        let mut s = ParamStore::new();
        let (w1, w2) = cfg.conv_widths;
        let d = cfg.embed_dim;
        let n = cfg.horizon;
        let conv1 = Conv2d::new(&mut s, "embed.conv1", cfg.in_channels, w1, 3, 1, rng);
        let conv2 = Conv2d::new(&mut s, "embed.conv2", w1, w2, 3, 2, rng);
        let proj = Linear::new(&mut s, "embed.proj", w2, d, rng);
        let branches = Command::ALL
            .iter()
            .map(|c| {
                let name = format!("plan.{}", c.name());
                let gru = GruCell::new(&mut s, &format!("{name}.gru"), 2, d, rng);
                let out = Linear::new(&mut s, &format!("{name}.out"), d, 2, rng);
                Branch { gru, out }
            })
            .collect();
        let cls = Linear::new(&mut s, "plan.command", d, NUM_COMMANDS, rng);
        let refine_gru = GruCell::new(&mut s, "refine.gru", 2 + 2 * n, d, rng);
        let refine_out = Linear::zeros(&mut s, "refine.out", d, 2 * n);
        Ok(Self { cfg, store: s, conv1, conv2, proj, branches, cls, refine_gru, refine_out })
    }

    /// Names of parameters that belong to the coarse planner (decoders and likelihood head).
    pub fn is_coarse_param(name: &str) -> bool {
        name.starts_with("plan.")
    }

    /// `[B, C, rows, cols]` crops to `[B, d]` embeddings.
    pub fn embed(&self, g: &Graph<T>, roi: Var) -> Var {
        let h = g.relu(self.conv1.forward(g, &self.store, roi));
        let h = g.relu(self.conv2.forward(g, &self.store, h));
        let pooled = g.global_avg_pool(h);
        g.relu(self.proj.forward(g, &self.store, pooled))
    }

    /// Rolls out one command decoder: `[B, d]` -> `[B, n * 2]`.
    fn decode(&self, g: &Graph<T>, z: Var, branch: &Branch) -> Var {
        let b = g.shape(z)[0];
        let mut h = z;
        let mut wp = g.constant(Tensor::zeros(&[b, 2]));
        let mut out = Vec::with_capacity(self.cfg.horizon);
        for _ in 0..self.cfg.horizon {
            h = branch.gru.forward(g, &self.store, g.scale(wp, POS_SCALE), h);
            wp = g.add(wp, branch.out.forward(g, &self.store, h));
            out.push(wp);
        }
        g.concat(&out, 1)
    }

    /// Trajectories for every command plus command logits.
    pub fn plan(&self, g: &Graph<T>, z: Var) -> PlanVars {
        let b = g.shape(z)[0];
        let n = self.cfg.horizon;
        let per: Vec<Var> = self.branches.iter().map(|br| self.decode(g, z, br)).collect();
        let plans = g.reshape(g.concat(&per, 1), &[b, NUM_COMMANDS, n, 2]);
        PlanVars { plans, cmd_logits: self.cls.forward(g, &self.store, z) }
    }

    /// The trajectory of one command per vehicle: `[B, n, 2]`.
    pub fn select(&self, g: &Graph<T>, plans: Var, cmds: &[Command]) -> Var {
        let b = cmds.len();
        let n = self.cfg.horizon;
        let flat = g.reshape(plans, &[b * NUM_COMMANDS, 2 * n]);
        let rows: Vec<usize> = cmds.iter().enumerate().map(|(i, c)| i * NUM_COMMANDS + c.index()).collect();
        g.reshape(g.gather_rows(flat, &rows), &[b, n, 2])
    }

    /// Goal-conditioned refinement of `coarse` (`[B, n, 2]`) over `iters` steps.
    /// The coarse plan is detached so refinement never trains the decoders.
    pub fn refine(&self, g: &Graph<T>, z: Var, coarse: Var, goals: &[[f64; 2]], iters: usize) -> RefineVars {
        let b = goals.len();
        let n = self.cfg.horizon;
        let gdata: Vec<T> = goals
            .iter()
            .flat_map(|p| {
                let norm = p[0].hypot(p[1]);
                let s = if norm > GOAL_CLAMP { GOAL_CLAMP / norm } else { 1.0 };
                [T::of(p[0] * s * POS_SCALE), T::of(p[1] * s * POS_SCALE)]
            })
            .collect();
        let goal = g.constant(Tensor::new(&[b, 2], gdata));
        let mut tau = g.detach(coarse);
        let mut h = z;
        let mut trajectories = vec![tau];
        let mut residuals = vec![];
        for _ in 0..iters {
            let flat = g.scale(g.reshape(tau, &[b, 2 * n]), POS_SCALE);
            let x = g.concat(&[goal, flat], 1);
            h = self.refine_gru.forward(g, &self.store, x, h);
            let delta = g.reshape(self.refine_out.forward(g, &self.store, h), &[b, n, 2]);
            tau = g.add(tau, delta);
            residuals.push(delta);
            trajectories.push(tau);
        }
        RefineVars { trajectories, residuals }
    }

    pub fn cast<U: Real>(&self) -> Planner<U> {
        Planner {
            cfg: self.cfg.clone(),
            store: self.store.cast(),
            conv1: self.conv1.clone(),
            conv2: self.conv2.clone(),
            proj: self.proj.clone(),
            branches: self.branches.clone(),
            cls: self.cls.clone(),
            refine_gru: self.refine_gru.clone(),
            refine_out: self.refine_out.clone(),
        }
    }

    pub fn to_named(&self) -> crate::nn::NamedTensors {
        self.store.to_named()
    }

    pub fn from_named(cfg: PlannerConfig, named: &crate::nn::NamedTensors) -> Result<Self> {
        let mut p = Self::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
        p.store.load_named(named).map_err(Error::Encoding)?;
        Ok(p)
    }
}

/// Plain-array view of planner outputs for one vehicle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanSet {
    /// Per command, `n` waypoints in the vehicle frame.
    pub trajectories: Vec<Vec<[f64; 2]>>,
    pub likelihoods: [f64; NUM_COMMANDS],
}

impl PlanSet {
    pub fn trajectory(&self, c: Command) -> &[[f64; 2]] {
        &self.trajectories[c.index()]
    }

    pub fn most_likely(&self) -> Command {
        let mut best = 0;
        for i in 1..NUM_COMMANDS {
            if self.likelihoods[i] > self.likelihoods[best] {
                best = i;
            }
        }
        Command::from_index(best).expect("six commands")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedPlan {
    pub trajectory: Vec<[f64; 2]>,
    pub residuals: Vec<Vec<[f64; 2]>>,
}

fn rows2(t: &Tensor<impl Real>, offset: usize, n: usize) -> Vec<[f64; 2]> {
    (0..n).map(|k| [t.data[offset + 2 * k].as_f64(), t.data[offset + 2 * k + 1].as_f64()]).collect()
}

/// Converts batched planner outputs to plan sets.
pub fn plan_sets<T: Real>(g: &Graph<T>, pv: &PlanVars) -> Vec<PlanSet> {
    let plans = g.value(pv.plans);
    let probs = g.value(g.softmax(pv.cmd_logits));
    let (b, n) = (plans.shape[0], plans.shape[2]);
    (0..b)
        .map(|i| {
            let trajectories = (0..NUM_COMMANDS).map(|c| rows2(&plans, (i * NUM_COMMANDS + c) * 2 * n, n)).collect();
            let mut likelihoods = [0.0; NUM_COMMANDS];
            for (c, l) in likelihoods.iter_mut().enumerate() {
                *l = probs.data[i * NUM_COMMANDS + c].as_f64();
            }
            PlanSet { trajectories, likelihoods }
        })
        .collect()
}

pub fn refined_plans<T: Real>(g: &Graph<T>, r: &RefineVars) -> Vec<RefinedPlan> {
    let last = g.value(r.last());
    let (b, n) = (last.shape[0], last.shape[1]);
    let res: Vec<_> = r.residuals.iter().map(|&v| g.value(v)).collect();
    (0..b)
        .map(|i| RefinedPlan { trajectory: rows2(&last, i * 2 * n, n), residuals: res.iter().map(|t| rows2(t, i * 2 * n, n)).collect() })
        .collect()
}

pub const CHECKPOINT_KIND: &str = "planner";

/// Saves one or more planners as a single checkpoint.
pub fn save_planner<T: Real>(planner: &Planner<T>, grid: crate::bev::GridSpec, path: &Path) -> Result<()> {
    Checkpoint::new(CHECKPOINT_KIND, grid, &planner.cfg, vec![(CHECKPOINT_KIND.into(), planner.to_named())])?.save(path)
}

pub fn load_planner<T: Real>(path: &Path, grid: Option<&crate::bev::GridSpec>) -> Result<Planner<T>> {
    let ck = Checkpoint::load(path, CHECKPOINT_KIND, grid)?;
    Planner::from_named(ck.config()?, ck.part(CHECKPOINT_KIND)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rng: &mut ChaCha8Rng) -> Planner<f64> {
        let mut cfg = PlannerConfig::new(3);
        cfg.roi = RoiTemplate { rows: 6, cols: 4, spacing: 1.0, back: 1.0 };
        cfg.conv_widths = (4, 6);
        cfg.embed_dim = 8;
        cfg.horizon = 4;
        Planner::new(cfg, rng).unwrap()
    }

    fn roi(g: &Graph<f64>, rng: &mut ChaCha8Rng, b: usize) -> Var {
        g.constant(Tensor::new(&[b, 3, 6, 4], (0..b * 72).map(|_| rng.random_range(-1.0..1.0)).collect()))
    }

    #[test]
    fn plan_set_shapes_and_probabilities() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = small(&mut rng);
        let g = Graph::new();
        let z = p.embed(&g, roi(&g, &mut rng, 3));
        assert_eq!(g.shape(z), vec![3, 8]);
        let pv = p.plan(&g, z);
        assert_eq!(g.shape(pv.plans), vec![3, 6, 4, 2]);
        for s in plan_sets(&g, &pv) {
            assert_eq!(s.trajectories.len(), 6);
            assert!((s.likelihoods.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rois_give_identical_embeddings_and_zero_roi_is_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = small(&mut rng);
        let g = Graph::new();
        let one = roi(&g, &mut rng, 1);
        let two = g.concat(&[one, one], 0);
        let z = g.value(p.embed(&g, two));
        assert_eq!(z.data[..8], z.data[8..]);
        let zero = g.constant(Tensor::zeros(&[1, 3, 6, 4]));
        assert!(g.value(p.embed(&g, zero)).data.iter().all(|v| v.is_finite()));
        let z2 = g.value(p.embed(&g, one));
        assert_eq!(z2.data[..], z.data[..8]);
    }

    #[test]
    fn zero_residual_head_keeps_coarse_plan() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = small(&mut rng);
        let g = Graph::new();
        let z = p.embed(&g, roi(&g, &mut rng, 2));
        let pv = p.plan(&g, z);
        let coarse = p.select(&g, pv.plans, &[Command::FollowLane, Command::TurnLeft]);
        let r = p.refine(&g, z, coarse, &[[5.0, 1.0], [3.0, -2.0]], 5);
        assert_eq!(g.value(r.last()).data, g.value(coarse).data);
        let r0 = p.refine(&g, z, coarse, &[[5.0, 1.0], [3.0, -2.0]], 0);
        assert_eq!(r0.trajectories.len(), 1);
        assert_eq!(g.value(r0.last()).data, g.value(coarse).data);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = small(&mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("planner.ckpt");
        save_planner(&p, crate::bev::GridSpec::desk(), &path).unwrap();
        let q: Planner<f64> = load_planner(&path, None).unwrap();
        assert_eq!(q.cfg, p.cfg);
        assert_eq!(q.to_named(), p.to_named());
    }
}
