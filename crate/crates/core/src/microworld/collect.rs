//! Expert data collection: runs an episode and writes its driving log.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::expert::{expert_policy, Expert};
use super::map::RoadMap;
use super::recorder::{capture_frame, CaptureConfig, LogMeta, LogWriter, Recorder};
use super::route::RouteConfig;
use super::scenarios::{setup_episode, ScenarioConfig};
use super::world::WorldConfig;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectConfig {
    pub world: WorldConfig,
    pub route: RouteConfig,
    pub capture: CaptureConfig,
    /// Simulation ticks between recorded frames.
    pub record_every: usize,
    /// Future waypoints per trajectory.
    pub horizon: usize,
    pub max_time: f64,
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self { world: WorldConfig::default(), route: RouteConfig::default(), capture: CaptureConfig::default(), record_every: 5, horizon: 10, max_time: 150.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSummary {
    pub dir: PathBuf,
    pub frames: usize,
    pub ticks: u64,
    pub completed: bool,
    pub off_road: bool,
}

pub fn collect_episode(map: Arc<RoadMap>, cfg: &CollectConfig, scenario: &ScenarioConfig, seed: u64, out_dir: &Path) -> Result<EpisodeSummary> {
    let (mut world, route) = setup_episode(map.clone(), &cfg.world, &cfg.route, scenario, seed)?;
    let mut expert = Expert::new(&route, &world);
    let mut recorder = Recorder::new(cfg.horizon);
    let mut writer = LogWriter::create(out_dir)?;
    let ego = world.ego.expect("episode has an ego");
    let mut off_road = false;
    let mut completed = false;
    loop {
        let out = expert_policy(&world, &mut expert);
        off_road |= out.off_road;
        if world.tick % cfg.record_every as u64 == 0 {
            let frame = capture_frame(&world, &route, &out, &cfg.capture);
            for f in recorder.push(frame, !out.off_road) {
                writer.append(&f)?;
            }
        }
        if out.finished {
            completed = true;
            break;
        }
        if world.time >= cfg.max_time {
            break;
        }
        world.step(&BTreeMap::from([(ego, out.control)]), cfg.world.dt)?;
    }
    for f in recorder.finish() {
        writer.append(&f)?;
    }
    let frames = writer.count();
    let meta = LogMeta {
        seed,
        map_id: map.id.clone(),
        route_goals: route.goals.iter().map(|g| [g.position.x, g.position.y]).collect(),
        route_commands: route.commands(),
        route_length: route.length(),
        dt: cfg.world.dt,
        record_every: cfg.record_every,
        horizon: cfg.horizon,
        scale_factor: cfg.route.scale,
        grid: cfg.capture.grid,
        scenario: scenario.kind.name().to_string(),
        frames,
        off_road,
    };
    let dir = writer.finish(meta)?;
    Ok(EpisodeSummary { dir, frames, ticks: world.tick, completed, off_road })
}
