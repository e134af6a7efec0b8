//! Low-level control: PIDs on the refined ego plan, brake override and collision gating.

pub mod brake;
pub mod gate;
pub mod pid;

use serde::{Deserialize, Serialize};

pub use brake::{BrakeClassifier, BrakeConfig, BrakeSample};
pub use gate::{collision_gate, GateHit, GateVehicle};
pub use pid::{brake_override, lateral_control, longitudinal_control, target_speed, PidGains, PidState};

use crate::microworld::world::Control;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlConfig {
    pub lateral: PidGains,
    pub longitudinal: PidGains,
    pub windup: f64,
    /// Index of the aim waypoint (the fifth point).
    pub aim_index: usize,
    /// Time between planned waypoints, s.
    pub waypoint_dt: f64,
    pub likelihood_threshold: f64,
    pub inflation: f64,
    /// Brake level above which the throttle is cut.
    pub brake_release: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            lateral: PidGains::LATERAL,
            longitudinal: PidGains::LONGITUDINAL,
            windup: 5.0,
            aim_index: 4,
            waypoint_dt: 0.5,
            likelihood_threshold: 0.2,
            inflation: 0.25,
            brake_release: 0.5,
        }
    }
}

/// Per-episode control state.
#[derive(Clone, Debug)]
pub struct Controller {
    pub cfg: ControlConfig,
    pub lateral: PidState,
    pub longitudinal: PidState,
    pub last_steer: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlTrace {
    pub target_speed: f64,
    pub brake_score: f64,
    pub hard_stop: bool,
}

impl Controller {
    pub fn new(cfg: ControlConfig) -> Self {
        Self { lateral: PidState::new(cfg.lateral, cfg.windup), longitudinal: PidState::new(cfg.longitudinal, cfg.windup), cfg, last_steer: 0.0 }
    }

    /// Action for one tick. A gate hit overrides everything with a held-steer full stop.
    pub fn act(&mut self, traj: &[[f64; 2]], speed: f64, brake_score: f64, gate_hit: bool, dt: f64) -> (Control, ControlTrace) {
        let trace = ControlTrace { target_speed: target_speed(traj, self.cfg.waypoint_dt), brake_score, hard_stop: gate_hit };
        if gate_hit {
            return (Control::new(self.last_steer, 0.0, 1.0), trace);
        }
        let steer = lateral_control(traj, self.cfg.aim_index, &mut self.lateral, dt);
        let (throttle, brake) = longitudinal_control(traj, speed, self.cfg.waypoint_dt, &mut self.longitudinal, dt);
        self.last_steer = steer;
        (brake_override(Control::new(steer, throttle, brake), brake_score, self.cfg.brake_release), trace)
    }
}
