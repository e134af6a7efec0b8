//! Frame capture, retroactive future labels and the on-disk driving log.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::expert::ExpertOutput;
use super::lidar::{lidar_scan, LidarConfig};
use super::map::{RASTER_BROKEN, RASTER_ROAD, RASTER_SOLID};
use super::route::Route;
use super::semantic::{classify_points, noisy_scores, sensor_rng, NUM_CLASSES};
use super::world::{ActorClass, Control, WorldState};
use crate::bev::{GridSpec, SemRasters};
use crate::command::Command;
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorRecord {
    pub id: u32,
    pub class: ActorClass,
    /// World-frame pose.
    pub pose: Pose2,
    pub half_length: f64,
    pub half_width: f64,
    pub speed: f64,
    /// Within sensor range and hit by at least one lidar ray.
    pub observed: bool,
    pub lidar_hits: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FutureRecord {
    pub id: u32,
    /// World-frame poses at the following recorded ticks.
    pub poses: Vec<Pose2>,
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    pub time: f64,
    pub ego_id: u32,
    pub ego_pose: Pose2,
    /// Flat ego-frame `(x, y, z, intensity)` quadruples.
    pub points: Vec<f32>,
    /// Flat per-point class scores, five per point.
    pub point_scores: Vec<f32>,
    pub actors: Vec<ActorRecord>,
    pub futures: Vec<FutureRecord>,
    pub sem_rasters: SemRasters,
    pub ego_cmd: Command,
    /// Ego-frame goal position.
    pub ego_goal: [f64; 2],
    pub ego_speed: f64,
    pub expert_action: Control,
    pub brake_label: bool,
    pub priv_features: Vec<f32>,
    pub route_progress: f64,
}

impl Frame {
    pub fn num_points(&self) -> usize {
        self.points.len() / 4
    }

    pub fn point(&self, i: usize) -> [f32; 4] {
        [self.points[4 * i], self.points[4 * i + 1], self.points[4 * i + 2], self.points[4 * i + 3]]
    }

    pub fn scores(&self, i: usize) -> [f32; NUM_CLASSES] {
        let s = &self.point_scores[NUM_CLASSES * i..NUM_CLASSES * (i + 1)];
        [s[0], s[1], s[2], s[3], s[4]]
    }

    pub fn actor(&self, id: u32) -> Option<&ActorRecord> {
        self.actors.iter().find(|a| a.id == id)
    }

    pub fn future(&self, id: u32) -> Option<&FutureRecord> {
        self.futures.iter().find(|f| f.id == id)
    }

    /// Future of `id` expressed in the frame of `reference`.
    pub fn local_future(&self, id: u32, reference: &Pose2) -> Option<Vec<Vec2>> {
        self.future(id).map(|f| f.poses.iter().map(|p| reference.to_local(p.position())).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub grid: GridSpec,
    pub lidar: LidarConfig,
    pub noise_rate: f64,
    /// Actors farther than this from the ego are never observed.
    pub sensor_range: f64,
    /// Goals closer than this are skipped when picking the ego goal.
    pub goal_min_ahead: f64,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self { grid: GridSpec::desk(), lidar: LidarConfig::default(), noise_rate: 0.0, sensor_range: 50.0, goal_min_ahead: 2.0 }
    }
}

/// Ground-truth semantic rasters on the ego-centered grid.
pub fn gt_rasters(state: &WorldState, ego: &Pose2, grid: &GridSpec) -> SemRasters {
    let mut r = SemRasters::empty(grid);
    let map = state.map.raster();
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            let f = map.at(ego.to_world(grid.cell_center(row, col)));
            if f == 0 {
                continue;
            }
            r.road.set(row, col, f & RASTER_ROAD != 0);
            r.solid.set(row, col, f & RASTER_SOLID != 0);
            r.broken.set(row, col, f & RASTER_BROKEN != 0);
        }
    }
    r
}

/// Captures sensors and ground truth for the current tick. Futures are left empty.
pub fn capture_frame(state: &WorldState, route: &Route, expert: &ExpertOutput, cfg: &CaptureConfig) -> Frame {
    let ego = state.ego_actor().expect("capture needs an ego").clone();
    let cloud = lidar_scan(state, &cfg.lidar);
    let labels = classify_points(&cloud, state);
    let scores = noisy_scores(&labels, cfg.noise_rate, &mut sensor_rng(state, 0x5E3A));
    let mut hits: BTreeMap<u32, u32> = BTreeMap::new();
    for l in &labels {
        if let Some(id) = l.actor {
            *hits.entry(id).or_default() += 1;
        }
    }
    let actors = state
        .actors
        .iter()
        .map(|a| {
            let n = hits.get(&a.id).copied().unwrap_or(0);
            let is_ego = a.id == ego.id;
            let in_range = a.pose.position().dist(ego.pose.position()) <= cfg.sensor_range;
            ActorRecord {
                id: a.id,
                class: a.class,
                pose: a.pose,
                half_length: a.half_length,
                half_width: a.half_width,
                speed: a.speed,
                observed: is_ego || (in_range && n > 0),
                lidar_hits: n,
            }
        })
        .collect();
    let s = expert.progress;
    let goal = route.goal_after(s, cfg.goal_min_ahead);
    let g = ego.pose.to_local(goal.position);
    Frame {
        tick: state.tick,
        time: state.time,
        ego_id: ego.id,
        ego_pose: ego.pose,
        points: cloud.iter().flatten().copied().collect(),
        point_scores: scores.iter().flatten().copied().collect(),
        actors,
        futures: vec![],
        sem_rasters: gt_rasters(state, &ego.pose, &cfg.grid),
        ego_cmd: route.command_at(s),
        ego_goal: [g.x, g.y],
        ego_speed: ego.speed,
        expert_action: expert.control,
        brake_label: expert.brake_label,
        priv_features: expert.priv_features.to_vec(),
        route_progress: s,
    }
}

struct Pending {
    frame: Frame,
    keep: bool,
    age: usize,
}

/// Holds frames until their future horizon has been observed.
pub struct Recorder {
    pub horizon: usize,
    pending: VecDeque<Pending>,
}

impl Recorder {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, pending: VecDeque::new() }
    }

    /// Adds a frame (observed now) and returns the frames whose labels are final.
    /// Frames with `keep = false` still supply future poses but are not returned.
    pub fn push(&mut self, mut frame: Frame, keep: bool) -> Vec<Frame> {
        let seen: BTreeMap<u32, Pose2> = frame.actors.iter().filter(|a| a.observed).map(|a| (a.id, a.pose)).collect();
        for p in &mut self.pending {
            for f in &mut p.frame.futures {
                if f.truncated {
                    continue;
                }
                match seen.get(&f.id) {
                    Some(pose) => f.poses.push(*pose),
                    None => f.truncated = true,
                }
            }
            p.age += 1;
        }
        frame.futures = frame.actors.iter().filter(|a| a.observed).map(|a| FutureRecord { id: a.id, poses: vec![], truncated: false }).collect();
        self.pending.push_back(Pending { frame, keep, age: 0 });
        let mut done = vec![];
        while self.pending.front().is_some_and(|p| p.age >= self.horizon) {
            let p = self.pending.pop_front().unwrap();
            if p.keep {
                done.push(p.frame);
            }
        }
        done
    }

    /// Releases the remaining frames with incomplete futures marked truncated.
    pub fn finish(&mut self) -> Vec<Frame> {
        self.pending
            .drain(..)
            .filter(|p| p.keep)
            .map(|mut p| {
                for f in &mut p.frame.futures {
                    if f.poses.len() < self.horizon {
                        f.truncated = true;
                    }
                }
                p.frame
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub seed: u64,
    pub map_id: String,
    pub route_goals: Vec<[f64; 2]>,
    pub route_commands: Vec<Command>,
    pub route_length: f64,
    pub dt: f64,
    pub record_every: usize,
    pub horizon: usize,
    pub scale_factor: f64,
    pub grid: GridSpec,
    pub scenario: String,
    pub frames: usize,
    pub off_road: bool,
}

const FRAMES_FILE: &str = "frames.cbor";
const META_FILE: &str = "meta.json";

/// Append-only writer of length-prefixed CBOR frame records.
pub struct LogWriter {
    dir: PathBuf,
    out: BufWriter<File>,
    count: usize,
}

impl LogWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        let out = BufWriter::new(File::create(dir.join(FRAMES_FILE))?);
        Ok(Self { dir: dir.to_path_buf(), out, count: 0 })
    }

    pub fn append(&mut self, frame: &Frame) -> Result<()> {
        let mut buf = vec![];
        ciborium::into_writer(frame, &mut buf).map_err(|e| Error::Encoding(e.to_string()))?;
        self.out.write_all(&(buf.len() as u64).to_le_bytes())?;
        self.out.write_all(&buf)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(mut self, mut meta: LogMeta) -> Result<PathBuf> {
        self.out.flush()?;
        meta.frames = self.count;
        fs::write(self.dir.join(META_FILE), serde_json::to_vec_pretty(&meta)?)?;
        Ok(self.dir)
    }
}

/// Random-access reader over one episode directory.
pub struct DrivingLog {
    pub dir: PathBuf,
    pub meta: LogMeta,
    offsets: Vec<(u64, u64)>,
}

impl DrivingLog {
    pub fn open(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        if !meta_path.exists() {
            return Err(Error::InputNotFound(meta_path));
        }
        let meta: LogMeta = serde_json::from_slice(&fs::read(&meta_path)?)?;
        let mut f = BufReader::new(File::open(dir.join(FRAMES_FILE))?);
        let total = f.get_ref().metadata()?.len();
        let mut offsets = vec![];
        let mut pos = 0u64;
        while pos + 8 <= total {
            let mut len = [0u8; 8];
            f.read_exact(&mut len)?;
            let len = u64::from_le_bytes(len);
            offsets.push((pos + 8, len));
            pos += 8 + len;
            f.seek(SeekFrom::Start(pos))?;
        }
        if pos != total {
            return Err(Error::Encoding(format!("truncated frame log in {}", dir.display())));
        }
        Ok(Self { dir: dir.to_path_buf(), meta, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<Frame> {
        let (off, len) = self.offsets[i];
        let mut f = File::open(self.dir.join(FRAMES_FILE))?;
        f.seek(SeekFrom::Start(off))?;
        let mut buf = vec![0u8; len as usize];
        f.read_exact(&mut buf)?;
        ciborium::from_reader(&buf[..]).map_err(|e| Error::Encoding(e.to_string()))
    }

    pub fn frames(&self) -> impl Iterator<Item = Result<Frame>> + '_ {
        (0..self.len()).map(|i| self.frame(i))
    }

    /// All episode directories below `root`, sorted by name.
    pub fn discover(root: &Path) -> Result<Vec<PathBuf>> {
        if !root.exists() {
            return Err(Error::InputNotFound(root.to_path_buf()));
        }
        let mut dirs = vec![];
        for e in fs::read_dir(root)? {
            let p = e?.path();
            if p.join(META_FILE).exists() {
                dirs.push(p);
            }
        }
        dirs.sort();
        Ok(dirs)
    }
}
