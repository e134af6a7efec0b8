//! Rule-based path driving shared by scripted traffic and the expert:
//! pure-pursuit steering and car-following speed control with light and hazard stops.

use serde::{Deserialize, Serialize};

use super::route::RouteStop;
use super::world::{ActorClass, ActorState, Control, LightPhase, WorldState};
use crate::geometry::{wrap_angle, Polyline, Pose2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveParams {
    pub cruise_speed: f64,
    pub max_lateral_accel: f64,
    pub accel: f64,
    pub comfort_decel: f64,
    pub headway: f64,
    pub min_gap: f64,
    /// Distance ahead scanned for lights and hazards.
    pub horizon: f64,
}

impl Default for DriveParams {
    fn default() -> Self {
        Self { cruise_speed: 6.0, max_lateral_accel: 2.0, accel: 2.0, comfort_decel: 3.0, headway: 1.2, min_gap: 2.0, horizon: 30.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrakeReason {
    Light,
    Vehicle,
    Pedestrian,
}

impl BrakeReason {
    pub fn is_hazard(self) -> bool {
        self != BrakeReason::Light
    }
}

/// What lies ahead on the path, as seen by the driver.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Ahead {
    /// Gap to a stop line whose light requires stopping.
    pub light_gap: Option<f64>,
    pub vehicle_gap: Option<f64>,
    pub vehicle_speed: f64,
    pub pedestrian_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct DriveOutput {
    pub control: Control,
    pub accel: f64,
    /// Constraint that lowered the acceleration below free-road driving.
    pub reason: Option<BrakeReason>,
    pub ahead: Ahead,
    pub finished: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathFollower {
    pub path: Polyline,
    pub stops: Vec<RouteStop>,
    pub s: f64,
}

impl PathFollower {
    pub fn new(path: Polyline, stops: Vec<RouteStop>, pose: &Pose2) -> Self {
        let s = path.project_window(pose.position(), 0.0, 30.0).s;
        Self { path, stops, s }
    }

    pub fn update(&mut self, pose: &Pose2) {
        self.s = self.path.project_window(pose.position(), self.s - 2.0, self.s + 12.0).s.max(self.s);
    }

    pub fn remaining(&self) -> f64 {
        self.path.length() - self.s
    }

    /// Pure-pursuit steering command in [-1, 1].
    pub fn steer(&self, me: &ActorState, wheelbase: f64, max_steer_angle: f64) -> f64 {
        let ld = (2.5 + 0.6 * me.speed).clamp(3.0, 8.0);
        let target = self.path.point_at(self.s + ld);
        let local = me.pose.to_local(target);
        let alpha = local.y.atan2(local.x);
        let dist = local.norm().max(1e-3);
        let delta = (2.0 * wheelbase * alpha.sin() / dist).atan();
        (delta / max_steer_angle).clamp(-1.0, 1.0)
    }

    /// Speed limit from the sharpest upcoming curvature.
    fn curve_speed(&self, params: &DriveParams, span: f64) -> f64 {
        let step = 3.0;
        let mut kappa: f64 = 0.0;
        let mut s = self.s;
        while s < self.s + span && s + step <= self.path.length() {
            let dh = wrap_angle(self.path.heading_at(s + step) - self.path.heading_at(s)).abs();
            kappa = kappa.max(dh / step);
            s += 1.0;
        }
        if kappa < 1e-6 {
            params.cruise_speed
        } else {
            (params.max_lateral_accel / kappa).sqrt().min(params.cruise_speed)
        }
    }
}

fn idm(params: &DriveParams, v: f64, v_des: f64, gap: f64, lead_speed: f64) -> f64 {
    let s_star = params.min_gap + v * params.headway + v * (v - lead_speed) / (2.0 * (params.accel * params.comfort_decel).sqrt());
    let free = 1.0 - (v / v_des.max(0.1)).powi(4);
    params.accel * (free - (s_star.max(0.0) / gap.max(0.1)).powi(2))
}

/// Looks for vehicles and pedestrians whose current or predicted footprint
/// crosses the path corridor ahead.
pub fn scan_ahead(world: &WorldState, me: &ActorState, follower: &PathFollower, horizon: f64) -> Ahead {
    let mut ahead = Ahead::default();
    let s0 = follower.s;
    let path = &follower.path;
    for other in &world.actors {
        if other.id == me.id || other.pose.position().dist(me.pose.position()) > horizon + 15.0 {
            continue;
        }
        let times: &[f64] = match other.class {
            ActorClass::Vehicle => &[0.0, 0.5],
            ActorClass::Pedestrian => &[0.0, 0.5, 1.0, 1.5, 2.0],
        };
        for &t in times {
            let p = other.pose.position() + other.velocity() * t;
            let pr = path.project_window(p, s0, s0 + horizon);
            if pr.s <= s0 + 0.5 {
                continue;
            }
            let dh = wrap_angle(other.pose.yaw - path.heading_at(pr.s));
            let lat_extent = (other.half_length * dh.sin()).abs() + (other.half_width * dh.cos()).abs();
            let lon_extent = (other.half_length * dh.cos()).abs() + (other.half_width * dh.sin()).abs();
            if pr.distance > me.half_width + lat_extent + 0.4 {
                continue;
            }
            let gap = (pr.s - s0 - me.half_length - lon_extent).max(0.0);
            match other.class {
                ActorClass::Vehicle => {
                    if ahead.vehicle_gap.is_none_or(|g| gap < g) {
                        ahead.vehicle_gap = Some(gap);
                        ahead.vehicle_speed = (other.speed * dh.cos()).max(0.0);
                    }
                }
                ActorClass::Pedestrian => {
                    if ahead.pedestrian_gap.is_none_or(|g| gap < g) {
                        ahead.pedestrian_gap = Some(gap);
                    }
                }
            }
            break;
        }
    }
    ahead
}

/// Gap to the first stop line ahead whose light requires stopping.
fn light_gap(world: &WorldState, me: &ActorState, follower: &PathFollower, params: &DriveParams) -> Option<f64> {
    for stop in &follower.stops {
        let gap = stop.s - follower.s - me.half_length;
        if gap < -1.0 {
            continue;
        }
        if gap > params.horizon {
            break;
        }
        let phase = world.light(stop.light).phase;
        if !phase.must_stop() {
            return None;
        }
        // Too close to stop comfortably on yellow: keep going.
        if phase == LightPhase::Yellow && me.speed * me.speed / (2.0 * params.comfort_decel) > gap.max(0.0) {
            return None;
        }
        return Some(gap.max(0.0));
    }
    None
}

/// Fraction of the comfortable acceleration below which a stopped driver keeps braking.
const STANDSTILL_HOLD: f64 = 0.25;

pub fn drive_along(world: &WorldState, me: &ActorState, follower: &mut PathFollower, params: &DriveParams, ignore_lights: bool, ignore_obstacles: bool) -> DriveOutput {
    follower.update(&me.pose);
    let cfg = &world.config;
    let finished = follower.remaining() < 1.0;
    let steer = follower.steer(me, cfg.wheelbase, cfg.max_steer_angle);
    let v = me.speed;
    let v_des = follower.curve_speed(params, (v * 3.0).max(10.0)).min(params.cruise_speed);
    // Slow down toward the end of the path.
    let end_gap = (follower.remaining() - 1.0).max(0.0);
    let mut accel = idm(params, v, v_des, f64::INFINITY, v).min(idm(params, v, v_des, end_gap + params.min_gap + 0.5, 0.0));
    let free = accel;
    let mut reason = None;
    let mut ahead = if ignore_obstacles { Ahead::default() } else { scan_ahead(world, me, follower, params.horizon) };
    if !ignore_lights {
        ahead.light_gap = light_gap(world, me, follower, params);
    }
    let mut consider = |gap: Option<f64>, lead: f64, r: BrakeReason| {
        if let Some(g) = gap {
            let a = idm(params, v, v_des, g, lead);
            if a < accel {
                accel = a;
                if a < free - 1e-9 {
                    reason = Some(r);
                }
            }
        }
    };
    consider(ahead.light_gap, 0.0, BrakeReason::Light);
    consider(ahead.vehicle_gap, ahead.vehicle_speed, BrakeReason::Vehicle);
    consider(ahead.pedestrian_gap, 0.0, BrakeReason::Pedestrian);
    // Hold the brake at standstill instead of creeping toward a stop line or a lead.
    let hold = v < 0.05 && reason.is_some() && accel < STANDSTILL_HOLD * params.accel;
    let control = if hold {
        Control::new(steer, 0.0, 1.0)
    } else if accel >= 0.0 {
        Control::new(steer, (accel / cfg.max_accel).min(1.0), 0.0)
    } else if v < 0.05 {
        Control::new(steer, 0.0, 1.0)
    } else {
        Control::new(steer, 0.0, (-accel / cfg.max_decel).min(1.0))
    };
    DriveOutput { control, accel, reason, ahead, finished }
}
