//! Episode setup: ego route, background traffic and scripted hazard events.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::driver::{DriveParams, PathFollower};
use super::map::{Maneuver, RoadMap};
use super::route::{random_lane_walk, sample_route, Route, RouteConfig};
use super::world::{ActorClass, Autopilot, Script, Trigger, Walker, WorldConfig, WorldState, PEDESTRIAN_HALF_EXTENT};
use crate::error::{Error, Result};
use crate::geometry::{Polyline, Pose2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    /// No other actors.
    Empty,
    /// Background traffic only.
    Traffic,
    CrossingPedestrian,
    LaneChanger,
    LeadBrake,
    RedLightRunner,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::Empty,
        ScenarioKind::Traffic,
        ScenarioKind::CrossingPedestrian,
        ScenarioKind::LaneChanger,
        ScenarioKind::LeadBrake,
        ScenarioKind::RedLightRunner,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Empty => "empty",
            ScenarioKind::Traffic => "traffic",
            ScenarioKind::CrossingPedestrian => "crossing-pedestrian",
            ScenarioKind::LaneChanger => "lane-changer",
            ScenarioKind::LeadBrake => "lead-brake",
            ScenarioKind::RedLightRunner => "red-light-runner",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| Error::InvalidArgument(format!("unknown scenario {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub background_vehicles: usize,
    pub background_pedestrians: usize,
}

impl ScenarioConfig {
    pub fn new(kind: ScenarioKind) -> Self {
        let (v, p) = if kind == ScenarioKind::Empty { (0, 0) } else { (12, 8) };
        Self { kind, background_vehicles: v, background_pedestrians: p }
    }
}

fn autopilot(route: &Route, pose: &Pose2, cruise: f64, ignore_lights: bool, trigger: Trigger) -> Script {
    Script::Autopilot(Box::new(Autopilot {
        follower: PathFollower::new(route.path.clone(), route.stops.clone(), pose),
        params: DriveParams { cruise_speed: cruise, ..DriveParams::default() },
        ignore_lights,
        trigger,
        started: false,
        brake_window: None,
        stuck: 0.0,
        creep_until: 0.0,
    }))
}

fn clear_of(world: &WorldState, pose: &Pose2, radius: f64) -> bool {
    world.actors.iter().all(|a| a.pose.position().dist(pose.position()) > radius)
}

/// Builds the world for one episode: samples the ego route and places actors.
pub fn setup_episode(map: Arc<RoadMap>, world_cfg: &WorldConfig, route_cfg: &RouteConfig, scenario: &ScenarioConfig, seed: u64) -> Result<(WorldState, Route)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let route = sample_route(&map, route_cfg, &mut rng)?;
    let mut world = WorldState::new(map.clone(), world_cfg.clone(), seed);
    world.spawn_ego(route.path.pose_at(0.0), 0.0);
    let npc_cfg = RouteConfig { lane_change_prob: 0.1, ..route_cfg.clone() };

    match scenario.kind {
        ScenarioKind::Empty | ScenarioKind::Traffic => {}
        ScenarioKind::CrossingPedestrian => {
            let s = rng.random_range(30.0..45.0f64).min(route.length() * 0.5);
            let p = route.path.pose_at(s);
            let n = p.forward().perp();
            let (a, b) = (p.position() + n * 12.0, p.position() - n * 6.0);
            let path = Polyline::new(vec![a, b]);
            let script = Script::Walker(Walker {
                path: path.clone(),
                speed: rng.random_range(1.2..1.6),
                s: 0.0,
                trigger: Trigger::EgoWithin { point: p.position(), radius: rng.random_range(18.0..24.0) },
                looped: false,
                started: false,
            });
            world.spawn(ActorClass::Pedestrian, path.pose_at(0.0), 0.0, PEDESTRIAN_HALF_EXTENT, PEDESTRIAN_HALF_EXTENT, Some(script));
        }
        ScenarioKind::LaneChanger => {
            let first = &map.lanes[route.lanes[0]];
            if let Some(nb) = first.left.or(first.right) {
                let start = map.lanes[nb].centerline.project(route.path.point_at(0.0)).s + 6.0;
                let mut lanes = vec![nb, first.id];
                let mut cur = first.id;
                for _ in 0..6 {
                    let succ = &map.lanes[cur].successors;
                    if succ.is_empty() {
                        break;
                    }
                    cur = succ[rng.random_range(0..succ.len())];
                    lanes.push(cur);
                }
                if let Ok(r) = Route::along(&map, &lanes, start, None, &npc_cfg, &mut rng) {
                    let pose = r.path.pose_at(0.0);
                    let script = autopilot(&r, &pose, 6.5, false, Trigger::Always);
                    world.spawn_vehicle(pose, 4.0, Some(script));
                }
            }
        }
        ScenarioKind::LeadBrake => {
            let pose = route.path.pose_at(20.0);
            let mut script = autopilot(&route, &pose, 5.0, false, Trigger::Always);
            if let Script::Autopilot(ap) = &mut script {
                let t0 = rng.random_range(5.0..9.0);
                ap.brake_window = Some((t0, t0 + 3.0));
            }
            world.spawn_vehicle(pose, 3.0, Some(script));
        }
        ScenarioKind::RedLightRunner => {
            if let Some(stop) = route.stops.first() {
                let site = map.lights[stop.light];
                let cross = map.lights.iter().find(|l| {
                    l.intersection == site.intersection
                        && l.axis != site.axis
                        && map.lanes[l.lane].successors.iter().any(|&c| map.lanes[c].maneuver() == Some(Maneuver::Straight))
                });
                if let Some(cross) = cross {
                    let lane = &map.lanes[cross.lane];
                    let start = (lane.length() - 30.0).max(0.0);
                    let conn = lane.successors.iter().copied().find(|&c| map.lanes[c].maneuver() == Some(Maneuver::Straight)).unwrap();
                    let lanes = vec![lane.id, conn, map.lanes[conn].successors[0]];
                    if let Ok(r) = Route::along(&map, &lanes, start, None, &npc_cfg, &mut rng) {
                        let pose = r.path.pose_at(0.0);
                        let trig = Trigger::EgoWithin { point: site.position, radius: rng.random_range(25.0..35.0) };
                        let script = autopilot(&r, &pose, 7.0, true, trig);
                        world.spawn_vehicle(pose, 0.0, Some(script));
                    }
                }
            }
        }
    }

    for _ in 0..scenario.background_vehicles {
        for _attempt in 0..20 {
            let Some((lanes, start)) = random_lane_walk(&map, 800.0, 0.1, 40.0, &mut rng) else { break };
            let Ok(r) = Route::along(&map, &lanes, start, None, &npc_cfg, &mut rng) else { continue };
            let pose = r.path.pose_at(0.0);
            if !clear_of(&world, &pose, 12.0) || route.path.project(pose.position()).distance < 3.0 && route.path.project(pose.position()).s < 30.0 {
                continue;
            }
            let cruise = rng.random_range(5.0..7.5);
            let script = autopilot(&r, &pose, cruise, false, Trigger::Always);
            world.spawn_vehicle(pose, rng.random_range(2.0..5.0), Some(script));
            break;
        }
    }
    if !map.sidewalks.is_empty() {
        for _ in 0..scenario.background_pedestrians {
            let walk = &map.sidewalks[rng.random_range(0..map.sidewalks.len())];
            let s = rng.random_range(0.0..walk.length());
            let (path, s) = if rng.random_bool(0.5) { (walk.clone(), s) } else { (reversed(walk), walk.length() - s) };
            let pose = path.pose_at(s);
            if !clear_of(&world, &pose, 2.0) {
                continue;
            }
            let script = Script::Walker(Walker { path, speed: rng.random_range(1.0..1.5), s, trigger: Trigger::Always, looped: true, started: false });
            world.spawn(ActorClass::Pedestrian, pose, 0.0, PEDESTRIAN_HALF_EXTENT, PEDESTRIAN_HALF_EXTENT, Some(script));
        }
    }
    Ok((world, route))
}

fn reversed(p: &Polyline) -> Polyline {
    let mut pts = p.points.clone();
    pts.reverse();
    Polyline::new(pts)
}
