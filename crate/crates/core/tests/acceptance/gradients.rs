use drivestack::bev::GridSpec;
use drivestack::command::Command;
use drivestack::geometry::{Pose2, Vec2};
use drivestack::nn::{Graph, Tensor};
use drivestack::perception::detect::{DetClass, OrientedBox};
use drivestack::perception::model::HeadVars;
use drivestack::perception::{perception_loss, LossWeights, PerceptionTargets};
use drivestack::planner::loss::{loss_ego, loss_other, loss_refine};
use drivestack::planner::roi::{roi_warp, GridFrame, RoiTemplate};
use rand::Rng;

use super::common::{check, random_tensor, rng};
use super::Outcome;

const INSTANCES: usize = 20;
const TOL: f64 = 1e-4;

fn roi_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let (cell, side) = (0.5 + r.random::<f64>(), r.random_range(8..14));
    let half = side as f64 * cell / 2.0;
    let fr = GridFrame { x_min: -half, y_min: -half, cell, rows: side, cols: side };
    let tpl = RoiTemplate { rows: r.random_range(2..6), cols: r.random_range(2..5), spacing: r.random_range(0.3..1.2), back: r.random_range(0.0..1.5) };
    let ch = r.random_range(1..4);
    let x = random_tensor(&[1, ch, fr.rows, fr.cols], -1.0, 1.0, &mut r);
    let poses: Vec<Pose2> = (0..r.random_range(1..4)).map(|_| Pose2::new(r.random_range(-1.5..1.5), r.random_range(-1.5..1.5), r.random_range(-3.1..3.1))).collect();
    let w = random_tensor(&[poses.len(), ch, tpl.rows, tpl.cols], -1.0, 1.0, &mut r);
    let eval = |x: &Tensor<f64>| {
        let g = Graph::new();
        let f = g.variable(x.clone());
        let crop = roi_warp(&g, f, &fr, &tpl, &poses).expect("poses inside the grid");
        let l = g.sum(g.mul(crop, g.constant(w.clone())));
        (g.item(l), g.backward(l).wrt(f).expect("feature gradient").clone())
    };
    let (_, grad) = eval(&x);
    check(&mut |t| eval(t).0, &x, &grad, 1e-5)
}

fn perception_instance(seed: u64) -> f64 {
    let mut r = rng(seed);
    let spec = GridSpec { x_min: -3.0, x_max: 3.0, y_min: -3.0, y_max: 3.0, pillar_size: 0.5, out_stride: 2, channels: 4 };
    let (rows, cols) = (spec.rows(), spec.cols());
    let n = r.random_range(1..3);
    let targets: Vec<PerceptionTargets> = (0..n)
        .map(|_| {
            let boxes = (0..r.random_range(1..4))
                .map(|_| OrientedBox {
                    center: Vec2::new(r.random_range(-2.8..2.8), r.random_range(-2.8..2.8)),
                    yaw: r.random_range(-3.1..3.1),
                    half_length: r.random_range(0.5..2.5),
                    half_width: r.random_range(0.3..1.2),
                    class: if r.random_bool(0.7) { DetClass::Vehicle } else { DetClass::Pedestrian },
                    score: 1.0,
                    is_ego: false,
                })
                .collect();
            let sem = (0..3 * rows * cols).map(|_| if r.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
            let wt = (0..3 * rows * cols).map(|_| if r.random_bool(0.8) { 1.0 } else { 0.0 }).collect();
            PerceptionTargets::from_boxes(boxes, sem, wt, &spec)
        })
        .collect();
    let refs: Vec<&PerceptionTargets> = targets.iter().collect();
    let weights = LossWeights { center: r.random_range(0.5..2.0), regression: r.random_range(0.5..2.0), semantic: r.random_range(0.5..2.0) };
    // All four heads packed in one tensor so a single check covers every input.
    let sizes = [2, 2, 2, 3];
    let total: usize = sizes.iter().sum();
    let x = random_tensor(&[n, total, rows, cols], -2.0, 2.0, &mut r);
    let eval = |x: &Tensor<f64>| {
        let g = Graph::new();
        let v = g.variable(x.clone());
        let mut at = 0;
        let mut parts = vec![];
        for s in sizes {
            parts.push(g.narrow(v, 1, at, s));
            at += s;
        }
        let heads = HeadVars { center_logits: parts[0], orient: parts[1], boxes: parts[2], sem_logits: parts[3] };
        let l = perception_loss(&g, &heads, &refs, &weights).expect("matching shapes").total;
        (g.item(l), g.backward(l).wrt(v).expect("head gradient").clone())
    };
    let (_, grad) = eval(&x);
    check(&mut |t| eval(t).0, &x, &grad, 1e-6)
}

fn futures(b: usize, n: usize, r: &mut impl Rng) -> Vec<Vec<[f64; 2]>> {
    (0..b).map(|_| (0..n).map(|_| [r.random_range(-5.0..5.0), r.random_range(-5.0..5.0)]).collect()).collect()
}

fn planner_instance(seed: u64, which: &str) -> f64 {
    let mut r = rng(seed);
    let (b, n) = (r.random_range(1..4), r.random_range(2..8));
    let ys = futures(b, n, &mut r);
    let cmds: Vec<Command> = (0..b).map(|_| Command::ALL[r.random_range(0..6)]).collect();
    let iters = r.random_range(1..5);
    let shape = if which == "refine" { vec![iters + 1, b, n, 2] } else { vec![b, 6, n, 2] };
    let x = random_tensor(&shape, -5.0, 5.0, &mut r);
    let eval = |x: &Tensor<f64>| {
        let g = Graph::new();
        let v = g.variable(x.clone());
        let l = match which {
            "ego" => loss_ego(&g, v, &ys, &cmds),
            "other" => loss_other(&g, v, &ys).0,
            _ => {
                let trajs: Vec<_> = (0..=iters).map(|k| g.reshape(g.narrow(v, 0, k, 1), &[b, n, 2])).collect();
                loss_refine(&g, &trajs, &ys).expect("at least one iteration")
            }
        };
        (g.item(l), g.backward(l).wrt(v).map(|t| t.clone()).unwrap_or_else(|| Tensor::zeros(&shape)))
    };
    let (_, grad) = eval(&x);
    check(&mut |t| eval(t).0, &x, &grad, 1e-6)
}

pub fn run() -> Outcome {
    let start = std::time::Instant::now();
    let mut worst = vec![];
    let suites: [(&str, &dyn Fn(u64) -> f64); 5] = [
        ("roi_warp", &roi_instance),
        ("perception_loss", &perception_instance),
        ("loss_ego", &|s| planner_instance(s, "ego")),
        ("loss_other", &|s| planner_instance(s, "other")),
        ("loss_refine", &|s| planner_instance(s, "refine")),
    ];
    for (name, f) in suites {
        let errs: Vec<f64> = (0..INSTANCES as u64).map(|s| f(1000 + s)).collect();
        worst.push((name, errs.iter().cloned().fold(0.0, f64::max)));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst.iter().all(|(_, e)| *e < TOL) && secs < 120.0;
    let detail = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect::<Vec<_>>().join(", ");
    Outcome::new(pass, format!("max rel. err over {INSTANCES} instances each: {detail} (tol {TOL:.0e}); {secs:.1} s (limit 120 s)"))
}
