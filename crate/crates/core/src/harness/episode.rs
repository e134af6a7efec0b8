//! Closed-loop episodes: sensing, policy stepping and infraction detection.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::command::Command;
use crate::error::{Error, Result};
use crate::geometry::{OrientedRect, Pose2, Vec2};
use crate::microworld::ekf::EkfConfig;
use crate::microworld::expert::{expert_policy, Expert, PRIV_FEATURES};
use crate::microworld::lidar::lidar_scan;
use crate::microworld::map::RoadMap;
use crate::microworld::recorder::CaptureConfig;
use crate::microworld::route::{Route, RouteConfig};
use crate::microworld::scenarios::{setup_episode, ScenarioConfig};
use crate::microworld::semantic::{classify_points, noisy_scores};
use crate::microworld::world::{ActorClass, Control, LightPhase, WorldConfig, WorldState};
use crate::planner::model::PlanSet;

/// Sensor degradation standing in for weather.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePreset {
    pub name: String,
    /// Probability that a lidar return is lost.
    pub dropout: f64,
    /// Semantic label noise rate.
    pub semantic_noise: f64,
}

impl NoisePreset {
    pub const NAMES: [&'static str; 4] = ["clean", "light", "medium", "heavy"];

    pub fn named(name: &str) -> Result<Self> {
        let (dropout, semantic_noise) = match name {
            "clean" => (0.0, 0.0),
            "light" => (0.05, 0.05),
            "medium" => (0.15, 0.1),
            "heavy" => (0.3, 0.2),
            _ => return Err(Error::InvalidArgument(format!("unknown noise preset {name:?}"))),
        };
        Ok(Self { name: name.into(), dropout, semantic_noise })
    }

    pub fn all() -> Vec<Self> {
        Self::NAMES.iter().map(|n| Self::named(n).expect("known preset")).collect()
    }
}

/// What a learned agent may read each control tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Sensors {
    pub tick: u64,
    pub time: f64,
    /// Ego-frame lidar returns, flat `(x, y, z, intensity)`.
    pub points: Vec<f32>,
    /// Per-point class scores, flat.
    pub scores: Vec<f32>,
    /// Speedometer, m/s.
    pub speed: f64,
    pub gnss: [f64; 2],
    pub compass: f64,
    /// Scene summary consumed by the brake classifier.
    pub priv_features: [f32; PRIV_FEATURES],
    pub half_length: f64,
    pub half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
    pub vehicle: bool,
    pub is_ego: bool,
    pub score: f64,
    /// Multi-modal plans in the detection's frame (non-ego vehicles only).
    pub plans: Option<PlanSet>,
}

/// Thresholded semantic predictions, one bit per cell, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticMasks {
    pub rows: usize,
    pub cols: usize,
    /// Cell size, m.
    pub cell: f64,
    /// Ego-frame position of cell (0, 0)'s center.
    pub origin: [f64; 2],
    /// Road, solid and broken layers.
    pub layers: [Vec<u8>; 3],
}

impl SemanticMasks {
    pub fn get(&self, layer: usize, row: usize, col: usize) -> bool {
        let i = row * self.cols + col;
        self.layers[layer][i / 8] >> (i % 8) & 1 == 1
    }
}

/// Policy internals logged with each decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrace {
    pub command: Command,
    pub goal: [f64; 2],
    pub pose_estimate: Pose2,
    pub plan: Vec<[f64; 2]>,
    pub detections: Vec<DetectionRecord>,
    pub semantic: Option<SemanticMasks>,
    pub brake_score: f64,
    pub hard_stop: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decision {
    pub control: Control,
    pub trace: Option<AgentTrace>,
}

/// A driving agent. Learned agents read only the sensors; the world handle exists for
/// privileged baselines such as the scripted expert.
pub trait Policy {
    fn name(&self) -> String;
    fn reset(&mut self, route: &Route, world: &WorldState) -> Result<()>;
    fn act(&mut self, sensors: &Sensors, world: &WorldState) -> Result<Decision>;
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Infraction {
    Vehicle { id: u32 },
    Pedestrian { id: u32 },
    Layout,
    RedLight { light: usize },
    Offroad,
    Blocked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Timeout,
    Blocked,
    PolicyError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TickRecord {
    pub tick: u64,
    pub time: f64,
    pub pose: Pose2,
    pub speed: f64,
    /// Route arc length reached so far (non-decreasing).
    pub progress: f64,
    pub on_road: bool,
    pub events: Vec<Infraction>,
    /// Action applied after this tick; absent on the final record.
    pub control: Option<Control>,
    pub trace: Option<AgentTrace>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub agent: String,
    pub map_id: String,
    pub scenario: String,
    pub seed: u64,
    pub repeat: u64,
    pub preset: NoisePreset,
    pub route_length: f64,
    pub dt: f64,
    pub time_budget: f64,
    pub termination: Termination,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub meta: EpisodeMeta,
    pub ticks: Vec<TickRecord>,
}

const META_FILE: &str = "episode.json";
const TICKS_FILE: &str = "ticks.cbor";

impl EpisodeLog {
    /// Writes the episode directory: JSON metadata plus length-prefixed CBOR tick records.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(META_FILE), serde_json::to_vec_pretty(&self.meta)?)?;
        let mut out = Vec::new();
        for t in &self.ticks {
            let mut buf = vec![];
            ciborium::into_writer(t, &mut buf).map_err(|e| Error::Encoding(e.to_string()))?;
            out.extend_from_slice(&(buf.len() as u64).to_le_bytes());
            out.extend_from_slice(&buf);
        }
        std::fs::write(dir.join(TICKS_FILE), out)?;
        Ok(())
    }

    /// Metadata and every tick record, each decoded independently.
    pub fn read_lenient(dir: &Path) -> Result<(EpisodeMeta, Vec<Result<TickRecord>>)> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::InputNotFound(meta_path));
        }
        let meta: EpisodeMeta = serde_json::from_slice(&std::fs::read(&meta_path)?)?;
        let bytes = std::fs::read(dir.join(TICKS_FILE))?;
        let mut ticks = vec![];
        let mut pos = 0usize;
        while pos + 8 <= bytes.len() {
            let len = u64::from_le_bytes(bytes[pos..pos + 8].try_into().expect("8 bytes")) as usize;
            pos += 8;
            let Some(rec) = bytes.get(pos..pos + len) else {
                ticks.push(Err(Error::Encoding("truncated tick record".into())));
                break;
            };
            ticks.push(ciborium::from_reader(rec).map_err(|e| Error::Encoding(e.to_string())));
            pos += len;
        }
        Ok((meta, ticks))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, ticks) = Self::read_lenient(dir)?;
        Ok(Self { meta, ticks: ticks.into_iter().collect::<Result<_>>()? })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub world: WorldConfig,
    pub route: RouteConfig,
    pub capture: CaptureConfig,
    pub ekf: EkfConfig,
    /// Seconds; derived from the route length when absent.
    pub time_budget: Option<f64>,
    pub blocked_time: f64,
    pub blocked_distance: f64,
    /// Simulation ticks per policy decision; the action is held in between.
    pub control_every: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            route: RouteConfig { length: (80.0, 120.0), ..RouteConfig::default() },
            capture: CaptureConfig::default(),
            ekf: EkfConfig::default(),
            time_budget: None,
            blocked_time: 60.0,
            blocked_distance: 1.0,
            control_every: 2,
        }
    }
}

impl EpisodeConfig {
    pub fn budget_for(&self, route_length: f64) -> f64 {
        self.time_budget.unwrap_or_else(|| (30.0 + route_length / 2.0).max(self.blocked_time + 10.0))
    }
}

fn sense(world: &WorldState, cfg: &EpisodeConfig, preset: &NoisePreset, priv_features: [f32; PRIV_FEATURES], rng: &mut ChaCha8Rng) -> Sensors {
    let ego = world.ego_actor().expect("episode has an ego");
    let cloud = lidar_scan(world, &cfg.capture.lidar);
    let kept: Vec<[f32; 4]> = cloud.into_iter().filter(|_| preset.dropout == 0.0 || !rng.random_bool(preset.dropout)).collect();
    let labels = classify_points(&kept, world);
    let scores = noisy_scores(&labels, preset.semantic_noise, rng);
    let gnss = Normal::new(0.0, cfg.ekf.gnss_std).expect("finite std");
    let compass = Normal::new(0.0, cfg.ekf.yaw_std).expect("finite std");
    Sensors {
        tick: world.tick,
        time: world.time,
        points: kept.iter().flatten().copied().collect(),
        scores: scores.iter().flatten().copied().collect(),
        speed: ego.speed,
        gnss: [ego.pose.x + gnss.sample(rng), ego.pose.y + gnss.sample(rng)],
        compass: ego.pose.yaw + compass.sample(rng),
        priv_features,
        half_length: ego.half_length,
        half_width: ego.half_width,
    }
}

fn segment_hits_rect(a: Vec2, b: Vec2, rect: &OrientedRect) -> bool {
    if rect.contains(a) || rect.contains(b) {
        return true;
    }
    rect.edges().iter().any(|&(c, d)| segments_cross(a, b, c, d))
}

fn segments_cross(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).cross(r - p);
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    d1 * d2 <= 0.0 && d3 * d4 <= 0.0 && !(d1 == 0.0 && d2 == 0.0 && d3 == 0.0 && d4 == 0.0)
}

/// Per-tick infraction detector holding the rising-edge state.
#[derive(Default)]
struct Monitor {
    touching: BTreeSet<u32>,
    on_wall: bool,
    off_road: bool,
    anchor: (f64, f64),
}

impl Monitor {
    fn observe(&mut self, world: &WorldState, route: &Route, prev_progress: f64, progress: f64, prev_phases: &[LightPhase]) -> (Vec<Infraction>, bool) {
        let ego = world.ego_actor().expect("episode has an ego");
        let rect = ego.rect();
        let mut events = vec![];
        let mut now = BTreeSet::new();
        for a in &world.actors {
            if a.id != ego.id && rect.overlaps(&a.rect()) {
                now.insert(a.id);
                if !self.touching.contains(&a.id) {
                    events.push(match a.class {
                        ActorClass::Vehicle => Infraction::Vehicle { id: a.id },
                        ActorClass::Pedestrian => Infraction::Pedestrian { id: a.id },
                    });
                }
            }
        }
        self.touching = now;
        let on_wall = world.map.walls.iter().any(|&(a, b)| segment_hits_rect(a, b, &rect));
        if on_wall && !self.on_wall {
            events.push(Infraction::Layout);
        }
        self.on_wall = on_wall;
        for stop in &route.stops {
            let front = |s: f64| s + ego.half_length;
            if front(prev_progress) < stop.s && front(progress) >= stop.s && prev_phases[stop.light] == LightPhase::Red {
                events.push(Infraction::RedLight { light: stop.light });
            }
        }
        let on_road = world.map.is_drivable(ego.pose.position());
        if !on_road && !self.off_road {
            events.push(Infraction::Offroad);
        }
        self.off_road = !on_road;
        (events, on_road)
    }
}

/// Runs `policy` on the episode defined by (`map`, `scenario`, `seed`). `repeat` only
/// changes the sensor noise draws.
#[allow(clippy::too_many_arguments)]
pub fn run_episode(
    policy: &mut dyn Policy,
    map: Arc<RoadMap>,
    scenario: &ScenarioConfig,
    seed: u64,
    repeat: u64,
    preset: &NoisePreset,
    cfg: &EpisodeConfig,
) -> Result<EpisodeLog> {
    if cfg.control_every == 0 {
        return Err(Error::Config("control_every must be positive".into()));
    }
    let (mut world, route) = setup_episode(map.clone(), &cfg.world, &cfg.route, scenario, seed)?;
    let ego = world.ego.expect("episode has an ego");
    let budget = cfg.budget_for(route.length());
    let mut tracker = Expert::new(&route, &world);
    policy.reset(&route, &world)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ repeat.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    let mut monitor = Monitor::default();
    let mut ticks = vec![];
    let mut progress = 0.0f64;
    let mut prev_progress = 0.0;
    let mut prev_phases: Vec<LightPhase> = world.traffic_lights.iter().map(|l| l.phase).collect();
    let mut held = Control::default();
    let mut error = None;
    let mut started = false;
    let termination = loop {
        let ex = expert_policy(&world, &mut tracker);
        progress = progress.max(ex.progress);
        let (mut events, on_road) = monitor.observe(&world, &route, prev_progress, progress, &prev_phases);
        if !started {
            // Reset the rising-edge state so the spawn pose never counts as an entry.
            events.retain(|e| !matches!(e, Infraction::Offroad));
            monitor.anchor = (progress, world.time);
            started = true;
        }
        if progress > monitor.anchor.0 + cfg.blocked_distance {
            monitor.anchor = (progress, world.time);
        }
        let mut rec = TickRecord {
            tick: world.tick,
            time: world.time,
            pose: world.ego_actor().expect("ego").pose,
            speed: world.ego_actor().expect("ego").speed,
            progress,
            on_road,
            events: vec![],
            control: None,
            trace: None,
        };
        let end = if ex.finished {
            Some(Termination::Completed)
        } else if world.time - monitor.anchor.1 > cfg.blocked_time {
            events.push(Infraction::Blocked);
            Some(Termination::Blocked)
        } else if world.time >= budget {
            Some(Termination::Timeout)
        } else {
            None
        };
        if let Some(t) = end {
            rec.events = events;
            ticks.push(rec);
            break t;
        }
        if world.tick % cfg.control_every as u64 == 0 {
            let sensors = sense(&world, cfg, preset, ex.priv_features, &mut rng);
            match policy.act(&sensors, &world) {
                Ok(d) => {
                    held = d.control;
                    rec.trace = d.trace;
                }
                Err(e) => {
                    events.push(Infraction::Blocked);
                    rec.events = events;
                    ticks.push(rec);
                    error = Some(e.to_string());
                    break Termination::PolicyError;
                }
            }
        }
        rec.events = events;
        rec.control = Some(held);
        ticks.push(rec);
        prev_progress = progress;
        prev_phases = world.traffic_lights.iter().map(|l| l.phase).collect();
        world.step(&BTreeMap::from([(ego, held)]), cfg.world.dt)?;
    };
    Ok(EpisodeLog {
        meta: EpisodeMeta {
            agent: policy.name(),
            map_id: map.id.clone(),
            scenario: scenario.kind.name().to_string(),
            seed,
            repeat,
            preset: preset.clone(),
            route_length: route.length(),
            dt: cfg.world.dt,
            time_budget: budget,
            termination,
            error,
        },
        ticks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_ordered_by_severity() {
        let p = NoisePreset::all();
        assert_eq!(p.len(), 4);
        for w in p.windows(2) {
            assert!(w[0].dropout <= w[1].dropout && w[0].semantic_noise <= w[1].semantic_noise);
        }
        assert!(NoisePreset::named("fog").is_err());
    }

    #[test]
    fn wall_segment_detection() {
        let r = OrientedRect::new(Pose2::default(), 2.0, 1.0);
        assert!(segment_hits_rect(Vec2::new(-5.0, 0.5), Vec2::new(5.0, 0.5), &r));
        assert!(segment_hits_rect(Vec2::new(0.0, 0.0), Vec2::new(0.1, 0.1), &r));
        assert!(!segment_hits_rect(Vec2::new(-5.0, 1.5), Vec2::new(5.0, 1.5), &r));
        assert!(segment_hits_rect(Vec2::new(-5.0, 1.0), Vec2::new(5.0, 1.0), &r));
    }
}
