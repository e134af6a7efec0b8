//! Route sampling over the lane graph: dense path, noisy goals and per-segment commands.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::map::{LaneKind, Maneuver, RoadMap};
use crate::command::Command;
use crate::error::{Error, Result};
use crate::geometry::{Polyline, Vec2};

const PATH_STEP: f64 = 1.0;
const LANE_CHANGE_LENGTH: f64 = 20.0;
const LANE_CHANGE_LEAD_IN: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteConfig {
    /// Route length range in meters.
    pub length: (f64, f64),
    /// Unscaled goal spacing range in meters.
    pub goal_spacing: (f64, f64),
    /// World-size factor applied to the goal spacing.
    pub scale: f64,
    /// Standard deviation of the additive goal noise, meters.
    pub goal_noise: f64,
    /// Look-ahead past a goal when deriving the segment command.
    pub approach: f64,
    pub lane_change_prob: f64,
    /// Largest start offset into the first lane.
    pub max_start_offset: f64,
}

impl Default for RouteConfig {
    fn default() -> Self {
        Self {
            length: (100.0, 400.0),
            goal_spacing: (50.0, 100.0),
            scale: 0.2,
            goal_noise: 1.0,
            approach: 5.0,
            lane_change_prob: 0.3,
            max_start_offset: 20.0,
        }
    }
}

impl RouteConfig {
    pub fn spacing(&self) -> (f64, f64) {
        (self.goal_spacing.0 * self.scale, self.goal_spacing.1 * self.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Goal {
    /// Noisy GNSS position, world frame.
    pub position: Vec2,
    /// Arc length of the true goal along the path.
    pub s: f64,
    /// Command for the segment ending at this goal.
    pub command: Command,
}

/// Signalized stop line on the route.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteStop {
    pub s: f64,
    pub light: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub path: Polyline,
    /// Maneuver tag of each path point.
    pub tags: Vec<Command>,
    pub goals: Vec<Goal>,
    pub stops: Vec<RouteStop>,
    pub lanes: Vec<usize>,
}

impl Route {
    pub fn length(&self) -> f64 {
        self.path.length()
    }

    /// Index of the segment (and its goal) that covers arc length `s`.
    pub fn segment_at(&self, s: f64) -> usize {
        self.goals.iter().position(|g| g.s >= s).unwrap_or(self.goals.len() - 1)
    }

    pub fn command_at(&self, s: f64) -> Command {
        self.goals[self.segment_at(s)].command
    }

    /// The next goal more than `min_ahead` meters beyond `s`, or the last one.
    pub fn goal_after(&self, s: f64, min_ahead: f64) -> &Goal {
        self.goals.iter().find(|g| g.s > s + min_ahead).unwrap_or_else(|| self.goals.last().unwrap())
    }

    pub fn commands(&self) -> Vec<Command> {
        self.goals.iter().map(|g| g.command).collect()
    }

    /// Builds a route along a lane sequence. Consecutive lanes must be
    /// successors or same-direction neighbors (a lane change).
    pub fn along<R: Rng>(map: &RoadMap, lanes: &[usize], start_s: f64, max_len: Option<f64>, cfg: &RouteConfig, rng: &mut R) -> Result<Route> {
        if lanes.is_empty() {
            return Err(Error::NoRoute("empty lane sequence".into()));
        }
        let mut pts: Vec<Vec2> = vec![];
        let mut tags: Vec<Command> = vec![];
        let mut stops = vec![];
        let push = |pts: &mut Vec<Vec2>, tags: &mut Vec<Command>, p: Vec2, t: Command| {
            if pts.last().map(|q: &Vec2| q.dist(p) < 1e-6).unwrap_or(false) {
                return;
            }
            pts.push(p);
            tags.push(t);
        };
        let mut s_in = start_s;
        let mut i = 0;
        while i < lanes.len() {
            let lane = &map.lanes[lanes[i]];
            let tag = match lane.maneuver() {
                Some(Maneuver::Left) => Command::TurnLeft,
                Some(Maneuver::Right) => Command::TurnRight,
                Some(Maneuver::Straight) => Command::GoStraight,
                None => Command::FollowLane,
            };
            let next = lanes.get(i + 1).map(|&n| &map.lanes[n]);
            let change = next.filter(|n| lane.left == Some(n.id) || lane.right == Some(n.id));
            if let Some(target) = change {
                let a = s_in + LANE_CHANGE_LEAD_IN;
                let b = a + LANE_CHANGE_LENGTH;
                if b > lane.length().min(target.length()) {
                    return Err(Error::NoRoute(format!("lane {} too short for a lane change", lane.id)));
                }
                sample_range(&lane.centerline, s_in, a, |p| push(&mut pts, &mut tags, p, tag));
                let ctag = if lane.left == Some(target.id) { Command::ChangeLaneToLeft } else { Command::ChangeLaneToRight };
                let n = (LANE_CHANGE_LENGTH / PATH_STEP).round() as usize;
                for k in 1..=n {
                    let u = k as f64 / n as f64;
                    let w = 0.5 - 0.5 * (std::f64::consts::PI * u).cos();
                    let s = a + u * LANE_CHANGE_LENGTH;
                    let p = lane.centerline.point_at(s) * (1.0 - w) + target.centerline.point_at(s) * w;
                    push(&mut pts, &mut tags, p, ctag);
                }
                s_in = b;
                i += 1;
                continue;
            }
            sample_range(&lane.centerline, s_in, lane.length(), |p| push(&mut pts, &mut tags, p, tag));
            if let (Some(light), Some(n)) = (lane.light, next) {
                if lane.successors.contains(&n.id) {
                    stops.push(RouteStop { s: Polyline::new(pts.clone()).length(), light });
                }
            }
            if let Some(n) = next {
                if !lane.successors.contains(&n.id) {
                    return Err(Error::NoRoute(format!("lane {} does not lead to lane {}", lane.id, n.id)));
                }
            }
            s_in = 0.0;
            i += 1;
        }
        if pts.len() < 2 {
            return Err(Error::NoRoute("degenerate path".into()));
        }
        let mut path = Polyline::new(pts);
        if let Some(max_len) = max_len {
            let keep = path.cumlen.iter().position(|&c| c >= max_len).map(|k| k + 1).unwrap_or(path.points.len());
            path = Polyline::new(path.points[..keep].to_vec());
            tags.truncate(keep);
            stops.retain(|st| st.s < path.length());
        }
        let goals = place_goals(&path, &tags, cfg, rng);
        Ok(Route { path, tags, goals, stops, lanes: lanes.to_vec() })
    }
}

fn sample_range(line: &Polyline, s0: f64, s1: f64, mut f: impl FnMut(Vec2)) {
    if s1 <= s0 {
        f(line.point_at(s0));
        return;
    }
    let n = ((s1 - s0) / PATH_STEP).ceil().max(1.0) as usize;
    // Include interior polyline vertices so curves keep their shape.
    let mut ss: Vec<f64> = (0..=n).map(|k| s0 + (s1 - s0) * k as f64 / n as f64).collect();
    ss.extend(line.cumlen.iter().copied().filter(|&c| c > s0 && c < s1));
    ss.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for s in ss {
        f(line.point_at(s));
    }
}

fn place_goals<R: Rng>(path: &Polyline, tags: &[Command], cfg: &RouteConfig, rng: &mut R) -> Vec<Goal> {
    let (lo, hi) = cfg.spacing();
    let len = path.length();
    let mut ss = vec![];
    let mut s = 0.0;
    loop {
        s += if hi > lo { rng.random_range(lo..=hi) } else { lo };
        if s >= len {
            // The final goal sits at the route end; merge it with the previous
            // goal if that would leave a segment shorter than the minimum spacing.
            if let Some(&last) = ss.last() {
                if len - last < lo {
                    ss.pop();
                }
            }
            ss.push(len);
            break;
        }
        ss.push(s);
    }
    let noise = Normal::new(0.0, cfg.goal_noise.max(0.0)).unwrap();
    let mut prev = 0.0;
    ss.iter()
        .map(|&s| {
            let command = segment_command(path, tags, prev, s + cfg.approach);
            prev = s;
            let p = path.point_at(s);
            Goal { position: Vec2::new(p.x + noise.sample(rng), p.y + noise.sample(rng)), s, command }
        })
        .collect()
}

/// First non-default maneuver with arc length in `(s0, s1]`.
fn segment_command(path: &Polyline, tags: &[Command], s0: f64, s1: f64) -> Command {
    path.cumlen
        .iter()
        .zip(tags)
        .filter(|(&c, _)| c > s0 && c <= s1)
        .map(|(_, &t)| t)
        .find(|&t| t != Command::FollowLane)
        .unwrap_or(Command::FollowLane)
}

/// Random walk over the lane graph. Returns the lane sequence and start offset.
pub fn random_lane_walk<R: Rng>(map: &RoadMap, min_len: f64, lane_change_prob: f64, max_start_offset: f64, rng: &mut R) -> Option<(Vec<usize>, f64)> {
    let roads: Vec<usize> = map.road_lanes().map(|l| l.id).collect();
    if roads.is_empty() {
        return None;
    }
    let first = roads[rng.random_range(0..roads.len())];
    let l0 = map.lanes[first].length();
    let start = rng.random_range(0.0..=max_start_offset.min(l0 * 0.5).max(0.0));
    let mut lanes = vec![first];
    let mut total = l0 - start;
    let mut entry = start;
    while total < min_len {
        let cur = &map.lanes[*lanes.last().unwrap()];
        let is_road = matches!(cur.kind, LaneKind::Road { .. });
        let room = cur.length() - entry;
        let neighbors: Vec<usize> = [cur.left, cur.right].into_iter().flatten().collect();
        // Only change lanes once per road lane, and leave room before the intersection.
        let last_was_change = lanes.len() >= 2 && {
            let p = &map.lanes[lanes[lanes.len() - 2]];
            p.left == Some(cur.id) || p.right == Some(cur.id)
        };
        if is_road && !last_was_change && !neighbors.is_empty() && room > LANE_CHANGE_LEAD_IN + LANE_CHANGE_LENGTH + 10.0 && rng.random_bool(lane_change_prob) {
            let n = neighbors[rng.random_range(0..neighbors.len())];
            lanes.push(n);
            entry += LANE_CHANGE_LEAD_IN + LANE_CHANGE_LENGTH;
            continue;
        }
        if cur.successors.is_empty() {
            break;
        }
        let nxt = cur.successors[rng.random_range(0..cur.successors.len())];
        lanes.push(nxt);
        total += map.lanes[nxt].length();
        entry = 0.0;
    }
    Some((lanes, start))
}

/// Samples a route of configured length with goals and segment commands.
pub fn sample_route<R: Rng>(map: &RoadMap, cfg: &RouteConfig, rng: &mut R) -> Result<Route> {
    if !map.is_connected() {
        return Err(Error::DisconnectedMap);
    }
    for _ in 0..200 {
        let target = if cfg.length.1 > cfg.length.0 { rng.random_range(cfg.length.0..=cfg.length.1) } else { cfg.length.0 };
        let Some((lanes, start)) = random_lane_walk(map, target, cfg.lane_change_prob, cfg.max_start_offset, rng) else {
            break;
        };
        let route = Route::along(map, &lanes, start, Some(target), cfg, rng)?;
        if route.length() + 1e-6 >= cfg.length.0.min(target) {
            return Ok(route);
        }
    }
    Err(Error::NoRoute(format!("no route of length {:?} on map {}", cfg.length, map.id)))
}
