use drivestack::command::{Command, NUM_COMMANDS};
use drivestack::controller::{collision_gate, GateHit, GateVehicle};
use drivestack::geometry::Pose2;
use drivestack::planner::model::PlanSet;
use rand::Rng;

use super::common::rng;
use super::Outcome;

type P = [f64; 2];

/// Corners of a rectangle centered at `c` with heading `yaw`, counter-clockwise.
fn corners(c: P, yaw: f64, hl: f64, hw: f64) -> [P; 4] {
    let (s, co) = yaw.sin_cos();
    [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| [c[0] + a * co - b * s, c[1] + a * s + b * co])
}

fn cross(o: P, a: P, b: P) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn inside(p: P, poly: &[P; 4]) -> bool {
    (0..4).all(|i| cross(poly[i], poly[(i + 1) % 4], p) >= 0.0)
}

fn segments_cross(a: P, b: P, c: P, d: P) -> bool {
    let (d1, d2) = (cross(a, b, c), cross(a, b, d));
    let (d3, d4) = (cross(c, d, a), cross(c, d, b));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0
}

/// Two convex quads intersect iff an edge pair crosses or one contains the other.
fn quads_meet(a: &[P; 4], b: &[P; 4]) -> bool {
    (0..4).any(|i| (0..4).any(|j| segments_cross(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]))) || inside(a[0], b) || inside(b[0], a)
}

/// Footprint centers and headings along a trajectory in the frame of `origin`,
/// heading along the segment from the previous point.
fn footprints(origin: (P, f64), traj: &[P]) -> Vec<(P, f64)> {
    let (o, oyaw) = origin;
    let (s, c) = oyaw.sin_cos();
    let mut prev = [0.0, 0.0];
    let mut yaw = 0.0;
    traj.iter()
        .map(|p| {
            let (dx, dy) = (p[0] - prev[0], p[1] - prev[1]);
            if dx.hypot(dy) > 1e-3 {
                yaw = dy.atan2(dx);
            }
            prev = *p;
            ([o[0] + p[0] * c - p[1] * s, o[1] + p[0] * s + p[1] * c], oyaw + yaw)
        })
        .collect()
}

struct Scene {
    ego: Vec<P>,
    others: Vec<(P, f64, f64, f64, PlanSet)>,
}

fn random_traj(n: usize, r: &mut impl Rng) -> Vec<P> {
    let (speed, curv) = (r.random_range(0.0..4.0), r.random_range(-0.15..0.15));
    let mut pos = [0.0, 0.0];
    let mut yaw: f64 = 0.0;
    (0..n)
        .map(|_| {
            yaw += curv * speed;
            pos = [pos[0] + speed * yaw.cos() + r.random_range(-0.1..0.1), pos[1] + speed * yaw.sin() + r.random_range(-0.1..0.1)];
            pos
        })
        .collect()
}

fn scene(r: &mut impl Rng) -> Scene {
    let n = 10;
    let ego = random_traj(n, r);
    let others = (0..r.random_range(1..4))
        .map(|_| {
            let trajectories = (0..NUM_COMMANDS).map(|_| random_traj(n, r)).collect();
            let mut likelihoods = [0.0; NUM_COMMANDS];
            let mut total = 0.0;
            for l in &mut likelihoods {
                *l = r.random_range(0.0..1.0f64).powi(3);
                total += *l;
            }
            likelihoods.iter_mut().for_each(|l| *l /= total);
            let pose = ([r.random_range(-5.0..30.0), r.random_range(-15.0..15.0)], r.random_range(-3.1..3.1));
            (pose.0, pose.1, r.random_range(1.8..2.6), r.random_range(0.8..1.1), PlanSet { trajectories, likelihoods })
        })
        .collect();
    Scene { ego, others }
}

/// Checks every (vehicle, command, step) footprint pair and reports the first hit in
/// vehicle, command, step order.
fn oracle(s: &Scene, hl: f64, hw: f64, threshold: f64, inflation: f64) -> Option<GateHit> {
    let ego: Vec<[P; 4]> = footprints(([0.0, 0.0], 0.0), &s.ego).into_iter().map(|(c, y)| corners(c, y, hl + inflation, hw + inflation)).collect();
    let mut hits = vec![];
    for (vi, (pos, yaw, vhl, vhw, plans)) in s.others.iter().enumerate() {
        for ci in 0..NUM_COMMANDS {
            let likely = plans.likelihoods[ci] > threshold;
            for (k, (c, y)) in footprints((*pos, *yaw), &plans.trajectories[ci]).into_iter().enumerate() {
                if likely && k < ego.len() && quads_meet(&ego[k], &corners(c, y, *vhl, *vhw)) {
                    hits.push(GateHit { vehicle: vi, command: Command::from_index(ci).unwrap(), step: k });
                }
            }
        }
    }
    hits.into_iter().next()
}

pub fn run() -> Outcome {
    let mut r = rng(4);
    let trials = 1000;
    let (mut agree, mut stops) = (0, 0);
    for _ in 0..trials {
        let s = scene(&mut r);
        let (hl, hw, thr, infl) = (2.25, 1.0, 0.2, 0.25);
        let vehicles: Vec<GateVehicle> =
            s.others.iter().map(|(p, y, vhl, vhw, plans)| GateVehicle { pose: Some(Pose2::new(p[0], p[1], *y)), half_length: *vhl, half_width: *vhw, plans: plans.clone() }).collect();
        let got = collision_gate(&s.ego, hl, hw, &vehicles, thr, infl);
        let want = oracle(&s, hl, hw, thr, infl);
        if got == want {
            agree += 1;
        }
        stops += want.is_some() as usize;
    }
    Outcome::new(agree == trials, format!("{agree}/{trials} trajectory pairs agree with the oracle ({stops} oracle stops)"))
}
