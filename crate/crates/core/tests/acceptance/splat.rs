use drivestack::bev::GridSpec;
use drivestack::geometry::{wrap_angle, Vec2};
use drivestack::perception::detect::{decode_detections, DetClass, OrientedBox, DEFAULT_POOL, DEFAULT_THRESHOLD};
use drivestack::perception::model::HeadMaps;
use drivestack::perception::PerceptionTargets;
use rand::Rng;

use super::common::rng;
use super::Outcome;

const SETS: usize = 500;
const MIN_SEPARATION: usize = 3;

fn random_set(spec: &GridSpec, r: &mut impl Rng) -> Vec<OrientedBox> {
    let want = r.random_range(1..=8);
    let mut boxes: Vec<OrientedBox> = vec![];
    let mut cells: Vec<(usize, usize)> = vec![];
    while boxes.len() < want {
        let c = Vec2::new(r.random_range(spec.x_min + 1.0..spec.x_max - 1.0), r.random_range(spec.y_min + 1.0..spec.y_max - 1.0));
        let cell = spec.cell_of(c).unwrap();
        if cells.iter().any(|&(a, b)| a.abs_diff(cell.0).max(b.abs_diff(cell.1)) < MIN_SEPARATION) {
            continue;
        }
        let vehicle = r.random_bool(0.7);
        boxes.push(OrientedBox {
            center: c,
            yaw: r.random_range(-std::f64::consts::PI..std::f64::consts::PI),
            half_length: if vehicle { r.random_range(1.8..2.8) } else { r.random_range(0.25..0.4) },
            half_width: if vehicle { r.random_range(0.8..1.2) } else { r.random_range(0.25..0.4) },
            class: if vehicle { DetClass::Vehicle } else { DetClass::Pedestrian },
            score: 1.0,
            is_ego: false,
        });
        cells.push(cell);
    }
    boxes
}

/// Head maps that reproduce the training targets exactly.
fn target_maps(t: &PerceptionTargets) -> HeadMaps {
    let mut m = HeadMaps::zeros(t.rows, t.cols);
    m.center.copy_from_slice(&t.center);
    for reg in &t.regression {
        for k in 0..2 {
            let i = m.idx(k, reg.row, reg.col);
            m.orient[i] = reg.values[k];
            m.boxes[i] = reg.values[2 + k];
        }
    }
    m
}

pub fn run() -> Outcome {
    let spec = GridSpec::desk();
    let mut r = rng(3);
    let mut recovered = 0;
    let mut worst_center: f64 = 0.0;
    let mut worst_yaw: f64 = 0.0;
    for _ in 0..SETS {
        let boxes = random_set(&spec, &mut r);
        let t = PerceptionTargets::from_boxes(boxes.clone(), vec![0.0; 3 * spec.rows() * spec.cols()], vec![0.0; 3 * spec.rows() * spec.cols()], &spec);
        let mut dets = decode_detections(&target_maps(&t), &spec, DEFAULT_THRESHOLD, DEFAULT_POOL);
        let mut ok = dets.len() == boxes.len();
        for b in &boxes {
            let hit = dets.iter().position(|d| {
                d.class == b.class && d.center.dist(b.center) <= spec.pillar_size && wrap_angle(d.yaw - b.yaw).abs() <= 0.1
            });
            match hit {
                Some(i) => {
                    let d = dets.remove(i);
                    worst_center = worst_center.max(d.center.dist(b.center) / spec.pillar_size);
                    worst_yaw = worst_yaw.max(wrap_angle(d.yaw - b.yaw).abs());
                }
                None => ok = false,
            }
        }
        if ok {
            recovered += 1;
        }
    }
    let rate = recovered as f64 / SETS as f64;
    Outcome::new(
        rate >= 0.95,
        format!("{recovered}/{SETS} sets recovered ({:.1}%, need 95%); worst matched center error {worst_center:.2} cells, yaw error {worst_yaw:.1e} rad", rate * 100.0),
    )
}
