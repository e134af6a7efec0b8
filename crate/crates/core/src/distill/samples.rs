//! Per-vehicle supervision extracted from recorded frames.

use crate::command::Command;
use crate::geometry::Pose2;
use crate::microworld::recorder::Frame;
use crate::microworld::world::ActorClass;
use crate::planner::roi::GridFrame;

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleSample {
    pub id: u32,
    /// Pose in the ego frame.
    pub pose: Pose2,
    /// Future waypoints in the vehicle's own frame.
    pub future: Vec<[f64; 2]>,
    pub is_ego: bool,
    /// Ground-truth command (ego only).
    pub command: Option<Command>,
    /// Route goal in the vehicle frame (ego only).
    pub goal: Option<[f64; 2]>,
}

/// Vehicle future in its own frame at capture time, if complete.
pub fn vehicle_future(frame: &Frame, id: u32, horizon: usize) -> Option<Vec<[f64; 2]>> {
    let a = frame.actor(id)?;
    let f = frame.future(id)?;
    if f.truncated || f.poses.len() < horizon {
        return None;
    }
    Some(f.poses[..horizon].iter().map(|p| a.pose.to_local(p.position())).map(|v| [v.x, v.y]).collect())
}

/// The ego plus every vehicle within `range` meters whose future is complete and whose
/// pose lies on the feature grid. Pedestrians are never planned for.
pub fn vehicle_samples(frame: &Frame, grid: &GridFrame, range: f64, horizon: usize) -> Vec<VehicleSample> {
    let mut out = vec![];
    for a in &frame.actors {
        if a.class != ActorClass::Vehicle {
            continue;
        }
        let is_ego = a.id == frame.ego_id;
        let pose = frame.ego_pose.relative(&a.pose);
        if !is_ego && (pose.position().norm() > range || !a.observed) {
            continue;
        }
        if !grid.contains(pose.position()) {
            continue;
        }
        let Some(future) = vehicle_future(frame, a.id, horizon) else { continue };
        // Ego goal is stored in the ego frame; re-express it in the ego vehicle's own
        // frame (they differ after rotation augmentation).
        let goal = is_ego.then(|| {
            let g = pose.to_local(crate::geometry::Vec2::new(frame.ego_goal[0], frame.ego_goal[1]));
            [g.x, g.y]
        });
        out.push(VehicleSample { id: a.id, pose, future, is_ego, command: is_ego.then_some(frame.ego_cmd), goal });
    }
    // Ego first, then by id.
    out.sort_by_key(|s| (!s.is_ego, s.id));
    out
}
