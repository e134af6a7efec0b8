//! Emergency stop check against every likely plan of every detected vehicle.

use crate::command::Command;
use crate::geometry::{OrientedRect, Pose2, Vec2};
use crate::planner::model::PlanSet;

/// A detected vehicle as the gate sees it.
#[derive(Clone, Debug)]
pub struct GateVehicle {
    /// Pose in the ego frame; detections without one are skipped.
    pub pose: Option<Pose2>,
    pub half_length: f64,
    pub half_width: f64,
    /// Plans in the vehicle's own frame.
    pub plans: PlanSet,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateHit {
    pub vehicle: usize,
    pub command: Command,
    pub step: usize,
}

/// Poses along a trajectory given in `origin`'s frame. Heading follows the segment from
/// the previous point (the origin for the first waypoint); a near-zero segment keeps the
/// previous heading.
pub fn footprint_poses(origin: &Pose2, traj: &[[f64; 2]]) -> Vec<Pose2> {
    let mut prev = Vec2::new(0.0, 0.0);
    let mut yaw = 0.0;
    traj.iter()
        .map(|p| {
            let cur = Vec2::new(p[0], p[1]);
            let d = Vec2::new(cur.x - prev.x, cur.y - prev.y);
            if d.norm() > 1e-3 {
                yaw = d.y.atan2(d.x);
            }
            prev = cur;
            origin.compose(&Pose2::new(cur.x, cur.y, yaw))
        })
        .collect()
}

/// First overlap between the inflated ego footprint along `ego_traj` and any plan whose
/// likelihood exceeds `threshold`, compared at shared timesteps.
pub fn collision_gate(
    ego_traj: &[[f64; 2]],
    ego_half_length: f64,
    ego_half_width: f64,
    others: &[GateVehicle],
    threshold: f64,
    inflation: f64,
) -> Option<GateHit> {
    let ego: Vec<OrientedRect> = footprint_poses(&Pose2::default(), ego_traj)
        .into_iter()
        .map(|p| OrientedRect::new(p, ego_half_length + inflation, ego_half_width + inflation))
        .collect();
    for (vi, v) in others.iter().enumerate() {
        let Some(pose) = v.pose else {
            log::warn!("collision gate: detection {vi} has no pose, skipped");
            continue;
        };
        for (ci, traj) in v.plans.trajectories.iter().enumerate() {
            if v.plans.likelihoods[ci] <= threshold {
                continue;
            }
            for (k, p) in footprint_poses(&pose, traj).into_iter().enumerate().take(ego.len()) {
                if ego[k].overlaps(&OrientedRect::new(p, v.half_length, v.half_width)) {
                    return Some(GateHit { vehicle: vi, command: Command::from_index(ci).expect("six branches"), step: k });
                }
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::command::NUM_COMMANDS;

    pub(crate) fn plan_set(traj: Vec<[f64; 2]>, likelihood: f64) -> PlanSet {
        let mut l = [(1.0 - likelihood) / (NUM_COMMANDS - 1) as f64; NUM_COMMANDS];
        l[0] = likelihood;
        PlanSet { trajectories: vec![traj; NUM_COMMANDS], likelihoods: l }
    }

    fn line(v: f64, n: usize) -> Vec<[f64; 2]> {
        (1..=n).map(|i| [v * 0.5 * i as f64, 0.0]).collect()
    }

    #[test]
    fn synchronized_crossing_stops() {
        let ego = line(2.0, 10);
        // Starts 5 m to the right of the ego's 5th waypoint heading left (+y), reaching it at step 5.
        let other = GateVehicle { pose: Some(Pose2::new(5.0, -5.0, std::f64::consts::FRAC_PI_2)), half_length: 2.25, half_width: 1.0, plans: plan_set(line(2.0, 10), 0.9) };
        assert!(collision_gate(&ego, 2.25, 1.0, &[other], 0.2, 0.25).is_some());
    }

    #[test]
    fn parallel_offset_passes() {
        let ego = line(2.0, 10);
        let other = GateVehicle { pose: Some(Pose2::new(0.0, 10.0, 0.0)), half_length: 2.25, half_width: 1.0, plans: plan_set(line(2.0, 10), 0.9) };
        assert!(collision_gate(&ego, 2.25, 1.0, &[other], 0.2, 0.25).is_none());
    }

    #[test]
    fn unit_threshold_never_stops() {
        let ego = line(2.0, 10);
        let other = GateVehicle { pose: Some(Pose2::new(3.0, 0.0, 0.0)), half_length: 2.25, half_width: 1.0, plans: plan_set(line(0.0, 10), 1.0) };
        assert!(collision_gate(&ego, 2.25, 1.0, std::slice::from_ref(&other), 0.2, 0.25).is_some());
        assert!(collision_gate(&ego, 2.25, 1.0, &[other], 1.0, 0.25).is_none());
    }

    #[test]
    fn missing_pose_is_skipped() {
        let ego = line(2.0, 10);
        let other = GateVehicle { pose: None, half_length: 2.25, half_width: 1.0, plans: plan_set(line(0.0, 10), 1.0) };
        assert!(collision_gate(&ego, 2.25, 1.0, &[other], 0.2, 0.25).is_none());
    }

    #[test]
    fn footprint_heading_follows_segments() {
        let p = footprint_poses(&Pose2::default(), &[[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]]);
        assert!((p[0].yaw).abs() < 1e-12);
        assert!((p[1].yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert!((p[2].yaw - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
