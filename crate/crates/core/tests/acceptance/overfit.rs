use drivestack::bev::GridSpec;
use drivestack::controller::{BrakeClassifier, BrakeConfig};
use drivestack::distill::privileged::{gather_batch, privileged_loss, privileged_step};
use drivestack::distill::student::{distill_loss, teacher_plans};
use drivestack::distill::{vehicle_samples, Teacher, TrainConfig, PRIV_CHANNELS};
use drivestack::geometry::Pose2;
use drivestack::microworld::dataset::FrameSource;
use drivestack::microworld::recorder::Frame;
use drivestack::nn::{Adam, Graph};
use drivestack::planner::model::{Planner, PlannerConfig};
use drivestack::planner::roi::GridFrame;
use drivestack::toolkit::pipeline::brake_samples;

use super::common::{rng, town_frames};
use super::Outcome;

const MAX_STEPS: usize = 5000;
const L1_TARGET: f64 = 0.1;

/// Vehicle-weighted mean coarse L1 (ego command branch, best branch for others).
fn coarse_l1(teacher: &Teacher<f32>, frames: &[Frame], cfg: &TrainConfig) -> (f64, usize) {
    let g = Graph::new();
    let (rois, samples) = gather_batch(&g, teacher, frames, cfg.vehicle_range).unwrap();
    let (_, terms) = privileged_loss(&g, &teacher.planner, rois.unwrap(), &samples, cfg).unwrap();
    let n_ego = samples.iter().filter(|s| s.is_ego).count() as f64;
    let n_other = samples.len() as f64 - n_ego;
    let l1 = (terms.get("ego").copied().unwrap_or(0.0) * n_ego + terms.get("other").copied().unwrap_or(0.0) * n_other) / samples.len() as f64;
    (l1, samples.len())
}

fn privileged_overfit(frames: &[Frame]) -> (bool, String) {
    let cfg = TrainConfig { lr: 1e-3, ..TrainConfig::privileged() };
    let mut teacher = Teacher::<f32>::new(GridSpec::desk(), PlannerConfig::new(PRIV_CHANNELS), 6).unwrap();
    let mut opt = Adam::new(&teacher.planner.store, cfg.lr);
    let mut steps = 0;
    let (mut l1, mut vehicles) = coarse_l1(&teacher, frames, &cfg);
    while steps < MAX_STEPS && l1 >= L1_TARGET {
        privileged_step(&mut teacher, &mut opt, frames, &cfg).unwrap();
        steps += 1;
        if steps % 50 == 0 {
            (l1, vehicles) = coarse_l1(&teacher, frames, &cfg);
        }
    }
    (l1 < L1_TARGET, format!("privileged mean L1 {l1:.4} m on {} frames / {vehicles} vehicles after {steps} steps", frames.len()))
}

fn brake_overfit(data: &impl FrameSource) -> (bool, String) {
    let samples = brake_samples(data, 100, 7).unwrap();
    let positives = samples.iter().filter(|s| s.label).count();
    // Trained to convergence: the default budget is sized for the full dataset.
    let cfg = BrakeConfig { steps: 10_000, ..BrakeConfig::default() };
    let mut clf = BrakeClassifier::<f64>::new(cfg.hidden, cfg.seed);
    let bce = clf.train(&samples, &cfg).unwrap();
    (bce < 0.05, format!("brake BCE {bce:.4} on {} frames ({positives} brake)", samples.len()))
}

fn copied_student(frames: &[Frame]) -> (bool, String) {
    let teacher = Teacher::<f64>::new(GridSpec::desk(), PlannerConfig::new(PRIV_CHANNELS), 8).unwrap();
    let mut copy = Planner::<f64>::new(PlannerConfig::new(PRIV_CHANNELS), &mut rng(9)).unwrap();
    copy.store.copy_from(&teacher.planner.store).unwrap();
    let grid = GridFrame::features(&teacher.grid);
    let (mut worst_plans, mut worst_total, mut vehicles): (f64, f64, usize) = (0.0, 0.0, 0);
    for f in frames {
        let poses: Vec<Pose2> = vehicle_samples(f, &grid, 25.0, 10).iter().map(|s| s.pose).collect();
        let tp = teacher_plans(&teacher, f, &poses).unwrap();
        let g = Graph::new();
        let z = copy.embed(&g, teacher.rois(&g, f, &poses).unwrap());
        let (total, plans, _) = distill_loss(&g, &copy, z, &tp, 0.1);
        worst_plans = worst_plans.max(g.item(plans).abs());
        worst_total = worst_total.max(g.item(total).abs());
        vehicles += poses.len();
    }
    // The trajectory term is exactly zero; the command KL carries float rounding only.
    (worst_plans == 0.0 && worst_total < 1e-12, format!("copied student: trajectory loss max {worst_plans:e}, total max {worst_total:.1e} over {vehicles} vehicles"))
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = town_frames(dir.path(), 400, 61);
    // Ten frames that carry at least one other vehicle within range.
    let grid = GridFrame::features(&GridSpec::desk());
    let mut busy = vec![];
    for i in 0..data.len() {
        let f = data.frame(i).unwrap();
        if vehicle_samples(&f, &grid, 15.0, 10).len() >= 2 && i % 7 == 0 {
            busy.push(f);
        }
        if busy.len() == 10 {
            break;
        }
    }
    let (p_ok, p) = privileged_overfit(&busy);
    let (b_ok, b) = brake_overfit(&data);
    let (c_ok, c) = copied_student(&busy);
    Outcome::new(p_ok && b_ok && c_ok && busy.len() == 10, format!("{p}; {b}; {c}"))
}
