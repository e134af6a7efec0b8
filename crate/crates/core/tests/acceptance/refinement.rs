use drivestack::command::Command;
use drivestack::nn::{Graph, Tensor};
use drivestack::planner::loss::loss_refine;
use drivestack::planner::model::{Planner, PlannerConfig};
use rand::Rng;

use super::common::{random_tensor, rng};
use super::Outcome;

fn setup(seed: u64) -> (Planner<f64>, Tensor<f64>, Vec<Command>, Vec<[f64; 2]>) {
    let mut r = rng(seed);
    let cfg = PlannerConfig::new(5);
    let planner = Planner::new(cfg.clone(), &mut r).unwrap();
    let b = 3;
    let roi = random_tensor(&[b, 5, cfg.roi.rows, cfg.roi.cols], 0.0, 1.0, &mut r);
    let cmds = (0..b).map(|_| Command::ALL[r.random_range(0..6)]).collect();
    let goals = (0..b).map(|_| [r.random_range(-5.0..40.0), r.random_range(-20.0..20.0)]).collect();
    (planner, roi, cmds, goals)
}

fn bit_equal(a: &Tensor<f64>, b: &Tensor<f64>) -> bool {
    a.shape == b.shape && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn run() -> Outcome {
    let mut notes = vec![];
    let mut pass = true;

    // Zero-initialized residual head: every iteration returns the coarse plan.
    let (planner, roi, cmds, goals) = setup(50);
    let g = Graph::new();
    let z = planner.embed(&g, g.constant(roi.clone()));
    let pv = planner.plan(&g, z);
    let coarse = planner.select(&g, pv.plans, &cmds);
    let r5 = planner.refine(&g, z, coarse, &goals, 5);
    let identity = r5.trajectories.iter().all(|&t| bit_equal(&g.value(t), &g.value(coarse)));
    pass &= identity;
    notes.push(format!("zero head identity over 5 iterations: {identity}"));

    // K = 0 returns the coarse plan bit for bit.
    let r0 = planner.refine(&g, z, coarse, &goals, 0);
    let k0 = r0.trajectories.len() == 1 && bit_equal(&g.value(r0.last()), &g.value(coarse));
    pass &= k0;
    notes.push(format!("K=0 bit-match: {k0}"));

    // With a non-trivial residual head, refinement gradients never reach the decoders.
    let (mut planner, roi, cmds, goals) = setup(51);
    let mut r = rng(52);
    for id in 0..planner.store.len() {
        if planner.store.name(id).starts_with("refine.out") {
            let t = planner.store.get_mut(id);
            t.data.iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
        }
    }
    let g = Graph::new();
    let z = planner.embed(&g, g.constant(roi));
    let pv = planner.plan(&g, z);
    let coarse = planner.select(&g, pv.plans, &cmds);
    let rv = planner.refine(&g, z, coarse, &goals, 5);
    let ys: Vec<Vec<[f64; 2]>> = (0..cmds.len()).map(|_| (0..planner.cfg.horizon).map(|_| [r.random_range(0.0..20.0), r.random_range(-3.0..3.0)]).collect()).collect();
    let l = loss_refine(&g, &rv.trajectories, &ys).unwrap();
    let grads = g.backward(l).for_store(&planner.store);
    let mut coarse_nonzero = 0usize;
    let mut coarse_params = 0usize;
    let mut refine_nonzero = 0usize;
    for (id, gr) in grads.iter().enumerate() {
        let name = planner.store.name(id);
        let nz = gr.as_ref().map_or(0, |t| t.data.iter().filter(|v| **v != 0.0).count());
        if Planner::<f64>::is_coarse_param(name) {
            coarse_params += 1;
            coarse_nonzero += nz;
        } else if name.starts_with("refine.") {
            refine_nonzero += nz;
        }
    }
    let stopped = coarse_nonzero == 0 && coarse_params > 0 && refine_nonzero > 0;
    pass &= stopped;
    notes.push(format!("non-zero refinement-loss gradient entries on {coarse_params} coarse tensors: {coarse_nonzero} (refinement head entries: {refine_nonzero})"));
    Outcome::new(pass, notes.join("; "))
}
