//! Imitation losses: ego command branch, best-fitting command for other
//! vehicles, command classification, refinement and distillation.

use crate::command::{Command, NUM_COMMANDS};
use crate::nn::{Graph, Real, Tensor, Var};

/// Weights of the combined motion objective.
pub const OTHER_WEIGHT: f64 = 0.5;
pub const CMD_WEIGHT: f64 = 0.1;

fn future_tensor<T: Real>(ys: &[Vec<[f64; 2]>], n: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(ys.len() * 2 * n);
    for y in ys {
        assert_eq!(y.len(), n, "future length must equal the planning horizon");
        for p in y {
            data.push(T::of(p[0]));
            data.push(T::of(p[1]));
        }
    }
    Tensor::new(&[ys.len(), n, 2], data)
}

/// Mean absolute error of each command branch: `[B, 6, n, 2]` vs futures -> `[B, 6]`.
pub fn branch_l1<T: Real>(g: &Graph<T>, plans: Var, ys: &[Vec<[f64; 2]>]) -> Var {
    let s = g.shape(plans);
    let (b, n) = (s[0], s[2]);
    let y = future_tensor::<T>(ys, n);
    let mut rep = Vec::with_capacity(b * NUM_COMMANDS * 2 * n);
    for i in 0..b {
        for _ in 0..NUM_COMMANDS {
            rep.extend_from_slice(&y.data[i * 2 * n..(i + 1) * 2 * n]);
        }
    }
    let y = g.constant(Tensor::new(&[b, NUM_COMMANDS, 2 * n], rep));
    let p = g.reshape(plans, &[b, NUM_COMMANDS, 2 * n]);
    g.mean_last(g.abs(g.sub(p, y)))
}

/// Mean absolute error of `[B, n, 2]` trajectories, averaged over the batch.
pub fn trajectory_l1<T: Real>(g: &Graph<T>, traj: Var, ys: &[Vec<[f64; 2]>]) -> Var {
    let n = g.shape(traj)[1];
    let y = g.constant(future_tensor(ys, n));
    g.mean(g.abs(g.sub(traj, y)))
}

/// Ego loss: L1 of the branch of the given command, batch mean.
pub fn loss_ego<T: Real>(g: &Graph<T>, plans: Var, ys: &[Vec<[f64; 2]>], cmds: &[Command]) -> Var {
    let l = branch_l1(g, plans, ys);
    let idx: Vec<usize> = cmds.iter().map(|c| c.index()).collect();
    g.mean(g.pick(l, &idx))
}

/// Other-vehicle loss: L1 of the best-fitting branch per vehicle (lowest index on ties),
/// batch mean; also returns the winning commands.
pub fn loss_other<T: Real>(g: &Graph<T>, plans: Var, ys: &[Vec<[f64; 2]>]) -> (Var, Vec<Command>) {
    let l = branch_l1(g, plans, ys);
    let (m, arg) = g.min_last(l);
    (g.mean(m), arg.into_iter().map(|i| Command::from_index(i).expect("six commands")).collect())
}

/// Cross-entropy of command logits `[B, 6]` against hard labels, batch mean.
pub fn loss_cmd<T: Real>(g: &Graph<T>, logits: Var, labels: &[Command]) -> Var {
    let idx: Vec<usize> = labels.iter().map(|c| c.index()).collect();
    g.neg(g.mean(g.pick(g.log_softmax(logits), &idx)))
}

/// Cross-entropy of command logits against soft target distributions, batch mean.
pub fn loss_cmd_soft<T: Real>(g: &Graph<T>, logits: Var, targets: &[[f64; NUM_COMMANDS]]) -> Var {
    let b = targets.len();
    let t = Tensor::new(&[b, NUM_COMMANDS], targets.iter().flatten().map(|&v| T::of(v)).collect());
    let ls = g.log_softmax(logits);
    g.scale(g.sum(g.mul(ls, g.constant(t))), -1.0 / b.max(1) as f64)
}

/// KL divergence from the target command distribution: soft cross-entropy minus the
/// target entropy, so it vanishes when the student reproduces the targets.
pub fn loss_cmd_kl<T: Real>(g: &Graph<T>, logits: Var, targets: &[[f64; NUM_COMMANDS]]) -> Var {
    let b = targets.len().max(1) as f64;
    let ent: f64 = targets.iter().flatten().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum::<f64>() / b;
    g.sub(loss_cmd_soft(g, logits, targets), g.constant(Tensor::scalar(T::of(ent))))
}

/// Sum over refinement iterations of the trajectory L1 (the detached coarse plan excluded).
pub fn loss_refine<T: Real>(g: &Graph<T>, trajectories: &[Var], ys: &[Vec<[f64; 2]>]) -> Option<Var> {
    let terms: Vec<Var> = trajectories.iter().skip(1).map(|&t| trajectory_l1(g, t, ys)).collect();
    terms.into_iter().reduce(|a, b| g.add(a, b))
}

/// Combined coarse objective `ego + other_w * other + cmd_w * cmd`; absent terms are dropped.
pub fn motion_loss<T: Real>(g: &Graph<T>, ego: Option<Var>, other: Option<Var>, cmd: Option<Var>, other_w: f64, cmd_w: f64) -> Option<Var> {
    let terms: Vec<Var> = [(ego, 1.0), (other, other_w), (cmd, cmd_w)]
        .into_iter()
        .filter_map(|(v, w)| v.map(|v| g.scale(v, w)))
        .collect();
    terms.into_iter().reduce(|a, b| g.add(a, b))
}

/// L1 between student and teacher trajectories over all commands, mean over elements.
pub fn loss_distill_plans<T: Real>(g: &Graph<T>, student: Var, teacher: &Tensor<T>) -> Var {
    g.mean(g.abs(g.sub(student, g.constant(teacher.clone()))))
}
