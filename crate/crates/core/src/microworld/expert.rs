//! Scripted expert driver used for data collection.

use serde::{Deserialize, Serialize};

use super::driver::{drive_along, Ahead, BrakeReason, DriveParams, PathFollower};
use super::route::Route;
use super::world::{Control, WorldState};

/// Number of privileged scene features.
pub const PRIV_FEATURES: usize = 8;
const FEATURE_RANGE: f64 = 30.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Expert {
    pub follower: PathFollower,
    pub params: DriveParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExpertOutput {
    pub control: Control,
    /// Set iff the expert brakes for a light or a hazard.
    pub brake_label: bool,
    pub reason: Option<BrakeReason>,
    /// Ego center is off the drivable area; the frame must not be recorded.
    pub off_road: bool,
    pub priv_features: [f32; PRIV_FEATURES],
    /// Arc length of the ego along the route.
    pub progress: f64,
    pub finished: bool,
}

impl Expert {
    pub fn new(route: &Route, state: &WorldState) -> Self {
        let ego = state.ego_actor().expect("expert needs an ego");
        Self { follower: PathFollower::new(route.path.clone(), route.stops.clone(), &ego.pose), params: DriveParams::default() }
    }
}

/// Expert control for the ego and its brake label.
pub fn expert_policy(state: &WorldState, expert: &mut Expert) -> ExpertOutput {
    let ego = state.ego_actor().expect("expert needs an ego").clone();
    let out = drive_along(state, &ego, &mut expert.follower, &expert.params, false, false);
    let brake_label = out.control.brake > 0.0 && out.reason.is_some();
    ExpertOutput {
        control: out.control,
        brake_label,
        reason: out.reason,
        off_road: !state.map.is_drivable(ego.pose.position()),
        priv_features: privileged_features(&out.ahead, ego.speed),
        progress: expert.follower.s,
        finished: out.finished,
    }
}

/// Fixed-length scene summary: light, lead vehicle and pedestrian cues plus ego speed.
pub fn privileged_features(ahead: &Ahead, ego_speed: f64) -> [f32; PRIV_FEATURES] {
    let flag = |g: Option<f64>| if g.is_some_and(|g| g < FEATURE_RANGE) { 1.0 } else { 0.0 };
    let dist = |g: Option<f64>| g.map(|g| (g / FEATURE_RANGE).min(1.0)).unwrap_or(1.0);
    [
        flag(ahead.light_gap),
        dist(ahead.light_gap),
        flag(ahead.vehicle_gap),
        dist(ahead.vehicle_gap),
        if ahead.vehicle_gap.is_some() { ahead.vehicle_speed / 10.0 } else { 0.0 },
        flag(ahead.pedestrian_gap),
        dist(ahead.pedestrian_gap),
        ego_speed / 10.0,
    ]
    .map(|x| x as f32)
}

/// Index of the red-light flag in the privileged feature vector.
pub const FEATURE_LIGHT: usize = 0;
