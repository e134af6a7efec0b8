//! World state and the fixed-step kinematic simulation.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::driver::{drive_along, DriveParams, PathFollower};
use super::map::RoadMap;
use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Polyline, Pose2, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActorClass {
    Vehicle,
    Pedestrian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// Positive steers left.
    pub steer: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl Control {
    pub fn new(steer: f64, throttle: f64, brake: f64) -> Self {
        Self { steer, throttle, brake }
    }

    pub fn is_finite(&self) -> bool {
        self.steer.is_finite() && self.throttle.is_finite() && self.brake.is_finite()
    }

    pub fn clamped(&self) -> Self {
        Self { steer: self.steer.clamp(-1.0, 1.0), throttle: self.throttle.clamp(0.0, 1.0), brake: self.brake.clamp(0.0, 1.0) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorState {
    pub id: u32,
    pub class: ActorClass,
    pub pose: Pose2,
    pub speed: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub control: Control,
}

impl ActorState {
    pub fn rect(&self) -> OrientedRect {
        OrientedRect::new(self.pose, self.half_length, self.half_width)
    }

    pub fn velocity(&self) -> Vec2 {
        self.pose.forward() * self.speed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightPhase {
    Green,
    Yellow,
    Red,
}

impl LightPhase {
    pub fn must_stop(self) -> bool {
        self != LightPhase::Green
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub position: Vec2,
    pub phase: LightPhase,
    pub intersection: usize,
    pub axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightTiming {
    pub green: f64,
    pub yellow: f64,
    pub all_red: f64,
    /// Phase offset between consecutive intersections.
    pub stagger: f64,
}

impl Default for LightTiming {
    fn default() -> Self {
        Self { green: 10.0, yellow: 2.0, all_red: 1.0, stagger: 7.0 }
    }
}

impl LightTiming {
    pub fn phase(&self, intersection: usize, axis: usize, time: f64) -> LightPhase {
        let half = self.green + self.yellow + self.all_red;
        let t = (time + intersection as f64 * self.stagger).rem_euclid(2.0 * half);
        let local = (t - axis as f64 * half).rem_euclid(2.0 * half);
        if local < self.green {
            LightPhase::Green
        } else if local < self.green + self.yellow {
            LightPhase::Yellow
        } else {
            LightPhase::Red
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub dt: f64,
    pub wheelbase: f64,
    /// Steering angle at |steer| = 1, radians.
    pub max_steer_angle: f64,
    pub max_accel: f64,
    pub max_decel: f64,
    pub max_speed: f64,
    pub lights: LightTiming,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self { dt: 0.1, wheelbase: 2.8, max_steer_angle: 0.7, max_accel: 3.0, max_decel: 8.0, max_speed: 15.0, lights: LightTiming::default() }
    }
}

/// When a scripted actor starts moving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Trigger {
    Always,
    AtTime(f64),
    /// When the ego comes within `radius` of `point`.
    EgoWithin { point: Vec2, radius: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub path: Polyline,
    pub speed: f64,
    pub s: f64,
    pub trigger: Trigger,
    pub looped: bool,
    pub started: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Autopilot {
    pub follower: PathFollower,
    pub params: DriveParams,
    pub ignore_lights: bool,
    pub trigger: Trigger,
    pub started: bool,
    /// Emergency stop during `[start, end)` seconds.
    pub brake_window: Option<(f64, f64)>,
    /// Seconds spent stopped behind something other than a light.
    pub stuck: f64,
    /// Obstacles are ignored until this time to break deadlocks.
    pub creep_until: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Script {
    Autopilot(Box<Autopilot>),
    Walker(Walker),
}

#[derive(Clone, Debug)]
pub struct WorldState {
    pub time: f64,
    pub tick: u64,
    pub actors: Vec<ActorState>,
    pub map: Arc<RoadMap>,
    pub traffic_lights: Vec<TrafficLight>,
    pub rng_seed: u64,
    pub config: WorldConfig,
    pub scripts: BTreeMap<u32, Script>,
    pub ego: Option<u32>,
    next_id: u32,
}

pub const VEHICLE_HALF_LENGTH: f64 = 2.25;
pub const VEHICLE_HALF_WIDTH: f64 = 1.0;
pub const PEDESTRIAN_HALF_EXTENT: f64 = 0.3;

impl WorldState {
    pub fn new(map: Arc<RoadMap>, config: WorldConfig, seed: u64) -> Self {
        let mut w = Self {
            time: 0.0,
            tick: 0,
            actors: vec![],
            traffic_lights: vec![],
            rng_seed: seed,
            config,
            scripts: BTreeMap::new(),
            ego: None,
            next_id: 0,
            map,
        };
        w.traffic_lights = w
            .map
            .lights
            .iter()
            .map(|l| TrafficLight { position: l.position, phase: LightPhase::Green, intersection: l.intersection, axis: l.axis })
            .collect();
        w.update_lights();
        w
    }

    fn update_lights(&mut self) {
        for l in &mut self.traffic_lights {
            l.phase = self.config.lights.phase(l.intersection, l.axis, self.time);
        }
    }

    pub fn spawn(&mut self, class: ActorClass, pose: Pose2, speed: f64, half_length: f64, half_width: f64, script: Option<Script>) -> u32 {
        assert!(half_length > 0.0 && half_width > 0.0, "actor extent must be positive");
        let id = self.next_id;
        self.next_id += 1;
        self.actors.push(ActorState { id, class, pose, speed: speed.max(0.0), half_length, half_width, control: Control::default() });
        if let Some(s) = script {
            self.scripts.insert(id, s);
        }
        id
    }

    pub fn spawn_vehicle(&mut self, pose: Pose2, speed: f64, script: Option<Script>) -> u32 {
        self.spawn(ActorClass::Vehicle, pose, speed, VEHICLE_HALF_LENGTH, VEHICLE_HALF_WIDTH, script)
    }

    pub fn spawn_ego(&mut self, pose: Pose2, speed: f64) -> u32 {
        let id = self.spawn_vehicle(pose, speed, None);
        self.ego = Some(id);
        id
    }

    pub fn actor(&self, id: u32) -> Option<&ActorState> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn ego_actor(&self) -> Option<&ActorState> {
        self.ego.and_then(|id| self.actor(id))
    }

    pub fn light(&self, i: usize) -> &TrafficLight {
        &self.traffic_lights[i]
    }

    fn trigger_fired(&self, t: &Trigger) -> bool {
        match *t {
            Trigger::Always => true,
            Trigger::AtTime(t0) => self.time >= t0,
            Trigger::EgoWithin { point, radius } => self.ego_actor().map(|e| e.pose.position().dist(point) <= radius).unwrap_or(false),
        }
    }

    /// Advances the world by one tick in place.
    pub fn step(&mut self, actions: &BTreeMap<u32, Control>, dt: f64) -> Result<()> {
        if (dt - self.config.dt).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("dt {dt} differs from the configured tick {}", self.config.dt)));
        }
        for (&id, c) in actions {
            let a = self.actor(id).ok_or(Error::UnknownActor(id))?;
            if a.class != ActorClass::Vehicle {
                return Err(Error::InvalidAction { id, reason: "pedestrians are scripted".into() });
            }
            if !c.is_finite() {
                return Err(Error::InvalidAction { id, reason: "non-finite control".into() });
            }
        }
        for a in &self.actors {
            if a.class == ActorClass::Vehicle && !self.scripts.contains_key(&a.id) && !actions.contains_key(&a.id) {
                return Err(Error::InvalidAction { id: a.id, reason: "missing control".into() });
            }
        }

        // Scripted decisions all see the pre-step state.
        let mut controls: BTreeMap<u32, Control> = BTreeMap::new();
        let mut scripts = std::mem::take(&mut self.scripts);
        let mut despawn = vec![];
        for (&id, script) in scripts.iter_mut() {
            let Some(me) = self.actor(id).cloned() else { continue };
            match script {
                Script::Autopilot(ap) => {
                    if !ap.started {
                        ap.started = self.trigger_fired(&ap.trigger);
                    }
                    let c = if !ap.started {
                        Control::new(0.0, 0.0, 1.0)
                    } else if ap.brake_window.is_some_and(|(a, b)| self.time >= a && self.time < b) {
                        ap.follower.update(&me.pose);
                        let steer = ap.follower.steer(&me, self.config.wheelbase, self.config.max_steer_angle);
                        Control::new(steer, 0.0, 1.0)
                    } else {
                        let ignore_obstacles = self.time < ap.creep_until;
                        let out = drive_along(self, &me, &mut ap.follower, &ap.params, ap.ignore_lights, ignore_obstacles);
                        if me.speed < 0.1 && out.reason.is_some_and(|r| r.is_hazard()) {
                            ap.stuck += dt;
                            if ap.stuck > 15.0 {
                                ap.stuck = 0.0;
                                ap.creep_until = self.time + 4.0;
                            }
                        } else if me.speed > 1.0 {
                            ap.stuck = 0.0;
                        }
                        if out.finished {
                            despawn.push(id);
                        }
                        out.control
                    };
                    controls.insert(id, c);
                }
                Script::Walker(w) => {
                    if !w.started {
                        w.started = self.trigger_fired(&w.trigger);
                    }
                }
            }
        }
        for (id, c) in actions {
            controls.insert(*id, c.clamped());
        }

        let cfg = self.config.clone();
        for a in &mut self.actors {
            match a.class {
                ActorClass::Vehicle => {
                    let c = controls.get(&a.id).copied().unwrap_or_default();
                    a.control = c;
                    integrate_bicycle(a, &c, &cfg, dt);
                }
                ActorClass::Pedestrian => {
                    if let Some(Script::Walker(w)) = scripts.get_mut(&a.id) {
                        if w.started {
                            w.s += w.speed * dt;
                            if w.s >= w.path.length() {
                                if w.looped {
                                    w.s -= w.path.length();
                                } else {
                                    despawn.push(a.id);
                                    continue;
                                }
                            }
                            a.pose = w.path.pose_at(w.s);
                            a.speed = w.speed;
                        } else {
                            a.speed = 0.0;
                        }
                    }
                }
            }
        }
        self.scripts = scripts;
        for id in despawn {
            self.actors.retain(|a| a.id != id);
            self.scripts.remove(&id);
        }
        self.tick += 1;
        self.time = self.tick as f64 * cfg.dt;
        self.update_lights();
        Ok(())
    }
}

/// Kinematic bicycle with explicit Euler: pose moves with the current speed,
/// then the speed integrates the commanded acceleration.
pub fn integrate_bicycle(a: &mut ActorState, c: &Control, cfg: &WorldConfig, dt: f64) {
    let c = c.clamped();
    let v = a.speed;
    let delta = c.steer * cfg.max_steer_angle;
    a.pose.x += v * a.pose.yaw.cos() * dt;
    a.pose.y += v * a.pose.yaw.sin() * dt;
    a.pose.yaw = crate::geometry::wrap_angle(a.pose.yaw + v / cfg.wheelbase * delta.tan() * dt);
    let acc = c.throttle * cfg.max_accel - c.brake * cfg.max_decel;
    a.speed = (v + acc * dt).clamp(0.0, cfg.max_speed);
}

/// Pure stepping function: returns the successor state.
pub fn step_world(state: &WorldState, actions: &BTreeMap<u32, Control>, dt: f64) -> Result<WorldState> {
    let mut next = state.clone();
    next.step(actions, dt)?;
    Ok(next)
}
