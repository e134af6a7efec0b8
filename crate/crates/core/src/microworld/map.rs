//! Road network: lanes, boundaries, drivable area, intersections and buildings.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_polygon, point_segment_distance, Polyline, Vec2};

pub const LANE_WIDTH: f64 = 3.5;
pub const LANES_PER_DIRECTION: usize = 2;
/// Half-width of a two-way road.
pub const ROAD_HALF_WIDTH: f64 = LANE_WIDTH * LANES_PER_DIRECTION as f64;
pub const INTERSECTION_HALF_SIZE: f64 = ROAD_HALF_WIDTH + 5.0;
/// Distance from a road centerline to the facade of the buildings beside it.
pub const BUILDING_SETBACK: f64 = ROAD_HALF_WIDTH + 4.0;
/// Sidewalk centerline offset from the road centerline.
pub const SIDEWALK_OFFSET: f64 = ROAD_HALF_WIDTH + 2.0;
const MARKING_HALF_WIDTH: f64 = 0.2;
const RASTER_LINE_HALF_WIDTH: f64 = 0.3;
const DASH_ON: f64 = 3.0;
const DASH_PERIOD: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Solid,
    Broken,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Maneuver {
    Straight,
    Left,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaneKind {
    /// Lane along a road edge. `index` 0 is next to the center line.
    Road { road: usize, forward: bool, index: usize },
    Connector { intersection: usize, maneuver: Maneuver },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lane {
    pub id: usize,
    pub centerline: Polyline,
    pub kind: LaneKind,
    pub successors: Vec<usize>,
    pub predecessors: Vec<usize>,
    /// Same-direction neighbors, relative to the driving direction.
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Traffic light guarding the end of this lane.
    pub light: Option<usize>,
}

impl Lane {
    pub fn length(&self) -> f64 {
        self.centerline.length()
    }

    pub fn is_connector(&self) -> bool {
        matches!(self.kind, LaneKind::Connector { .. })
    }

    pub fn maneuver(&self) -> Option<Maneuver> {
        match self.kind {
            LaneKind::Connector { maneuver, .. } => Some(maneuver),
            LaneKind::Road { .. } => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Boundary {
    pub line: Polyline,
    pub kind: BoundaryKind,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Intersection {
    pub center: Vec2,
    pub half_size: f64,
    pub connectors: Vec<usize>,
    pub signalized: bool,
}

/// Stop line of a signalized approach.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LightSite {
    pub position: Vec2,
    pub intersection: usize,
    /// 0 for approaches along x, 1 along y.
    pub axis: usize,
    pub lane: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoadMap {
    pub id: String,
    pub lanes: Vec<Lane>,
    pub boundaries: Vec<Boundary>,
    pub drivable: Vec<Vec<Vec2>>,
    pub intersections: Vec<Intersection>,
    pub lights: Vec<LightSite>,
    pub walls: Vec<(Vec2, Vec2)>,
    pub sidewalks: Vec<Polyline>,
    /// Axis-aligned extent of the ground plane, if any.
    pub ground: Option<(Vec2, Vec2)>,
    #[serde(skip)]
    raster: OnceLock<Arc<MapRaster>>,
}

/// Node of the road graph used by the map builders.
#[derive(Clone, Copy, Debug)]
pub struct Node {
    pub pos: Vec2,
}

impl RoadMap {
    /// Map with no roads and no ground.
    pub fn empty(id: &str) -> Self {
        Self {
            id: id.into(),
            lanes: vec![],
            boundaries: vec![],
            drivable: vec![],
            intersections: vec![],
            lights: vec![],
            walls: vec![],
            sidewalks: vec![],
            ground: None,
            raster: OnceLock::new(),
        }
    }

    /// Builds lanes, boundaries and connectors from straight road edges between nodes.
    /// Nodes with two or more incident edges become intersections.
    pub fn from_graph(id: &str, nodes: &[Node], edges: &[(usize, usize)]) -> Self {
        let mut map = RoadMap::empty(id);
        let degree: Vec<usize> = (0..nodes.len()).map(|n| edges.iter().filter(|e| e.0 == n || e.1 == n).count()).collect();
        let mut node_ix = vec![None; nodes.len()];
        for (n, node) in nodes.iter().enumerate() {
            if degree[n] >= 2 {
                node_ix[n] = Some(map.intersections.len());
                map.intersections.push(Intersection {
                    center: node.pos,
                    half_size: INTERSECTION_HALF_SIZE,
                    connectors: vec![],
                    signalized: degree[n] >= 3,
                });
                let h = INTERSECTION_HALF_SIZE;
                let c = node.pos;
                map.drivable.push(vec![
                    c + Vec2::new(-h, -h),
                    c + Vec2::new(h, -h),
                    c + Vec2::new(h, h),
                    c + Vec2::new(-h, h),
                ]);
            }
        }
        let trim = |n: usize| if node_ix[n].is_some() { INTERSECTION_HALF_SIZE } else { 0.0 };
        // Per node: (incoming lane ids, outgoing lane ids) with their edge direction.
        let mut incoming: Vec<Vec<(usize, Vec2, usize)>> = vec![vec![]; nodes.len()];
        let mut outgoing: Vec<Vec<(usize, Vec2, usize)>> = vec![vec![]; nodes.len()];
        for (road, &(a, b)) in edges.iter().enumerate() {
            let (pa, pb) = (nodes[a].pos, nodes[b].pos);
            let d = (pb - pa).normalized();
            let n = d.perp();
            let start = pa + d * trim(a);
            let end = pb - d * trim(b);
            let mut fwd = vec![];
            let mut bwd = vec![];
            for index in 0..LANES_PER_DIRECTION {
                let o = LANE_WIDTH * (index as f64 + 0.5);
                let id = map.lanes.len();
                map.lanes.push(new_lane(id, Polyline::new(vec![start - n * o, end - n * o]), LaneKind::Road { road, forward: true, index }));
                fwd.push(id);
                let id = map.lanes.len();
                map.lanes.push(new_lane(id, Polyline::new(vec![end + n * o, start + n * o]), LaneKind::Road { road, forward: false, index }));
                bwd.push(id);
            }
            for group in [&fwd, &bwd] {
                for w in group.windows(2) {
                    // Lower index is closer to the center line, i.e. to the left.
                    map.lanes[w[1]].left = Some(w[0]);
                    map.lanes[w[0]].right = Some(w[1]);
                }
            }
            for (k, &id) in fwd.iter().enumerate() {
                incoming[b].push((id, d, k));
                outgoing[a].push((id, d, k));
            }
            for (k, &id) in bwd.iter().enumerate() {
                incoming[a].push((id, -d, k));
                outgoing[b].push((id, -d, k));
            }
            let line = |off: f64| Polyline::new(vec![start + n * off, end + n * off]);
            map.boundaries.push(Boundary { line: line(0.0), kind: BoundaryKind::Solid });
            for k in 1..LANES_PER_DIRECTION {
                let off = LANE_WIDTH * k as f64;
                map.boundaries.push(Boundary { line: line(off), kind: BoundaryKind::Broken });
                map.boundaries.push(Boundary { line: line(-off), kind: BoundaryKind::Broken });
            }
            map.boundaries.push(Boundary { line: line(ROAD_HALF_WIDTH), kind: BoundaryKind::Solid });
            map.boundaries.push(Boundary { line: line(-ROAD_HALF_WIDTH), kind: BoundaryKind::Solid });
            // Overlap the intersection squares slightly so the union has no seams.
            let (s0, s1) = (start - d * 0.5, end + d * 0.5);
            let w = ROAD_HALF_WIDTH;
            map.drivable.push(vec![s0 - n * w, s1 - n * w, s1 + n * w, s0 + n * w]);
        }
        for (node, ix) in node_ix.iter().enumerate() {
            let Some(ix) = *ix else { continue };
            for &(lin, din, k) in &incoming[node] {
                let p0 = *map.lanes[lin].centerline.points.last().unwrap();
                for &(lout, dout, k2) in &outgoing[node] {
                    if k2 != k {
                        continue;
                    }
                    let cross = din.cross(dout);
                    let maneuver = if din.dot(dout) > 0.5 {
                        Maneuver::Straight
                    } else if cross > 0.5 {
                        Maneuver::Left
                    } else if cross < -0.5 {
                        Maneuver::Right
                    } else {
                        continue;
                    };
                    // Turns only from the lane on the turning side.
                    if (maneuver == Maneuver::Left && k != 0) || (maneuver == Maneuver::Right && k != LANES_PER_DIRECTION - 1) {
                        continue;
                    }
                    let p1 = map.lanes[lout].centerline.points[0];
                    let curve = connector_curve(p0, din, p1, dout, maneuver);
                    let id = map.lanes.len();
                    map.lanes.push(new_lane(id, curve, LaneKind::Connector { intersection: ix, maneuver }));
                    map.lanes[lin].successors.push(id);
                    map.lanes[id].predecessors.push(lin);
                    map.lanes[id].successors.push(lout);
                    map.lanes[lout].predecessors.push(id);
                    map.intersections[ix].connectors.push(id);
                }
                if map.intersections[ix].signalized {
                    let axis = if din.x.abs() >= din.y.abs() { 0 } else { 1 };
                    map.lanes[lin].light = Some(map.lights.len());
                    map.lights.push(LightSite { position: p0, intersection: ix, axis, lane: lin });
                }
            }
        }
        map.ground = map.drivable_bounds().map(|(lo, hi)| (lo - Vec2::new(30.0, 30.0), hi + Vec2::new(30.0, 30.0)));
        map
    }

    /// Town of `rows × cols` signalized intersections on a regular grid, with
    /// building blocks between roads and a wall around the outskirts.
    pub fn grid_town(rows: usize, cols: usize, spacing: f64) -> Self {
        assert!(rows >= 2 && cols >= 2, "grid town needs at least 2×2 intersections");
        let mut nodes = vec![];
        for r in 0..rows {
            for c in 0..cols {
                nodes.push(Node { pos: Vec2::new(c as f64 * spacing, r as f64 * spacing) });
            }
        }
        let mut edges = vec![];
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.push((i, i + 1));
                }
                if r + 1 < rows {
                    edges.push((i, i + cols));
                }
            }
        }
        let mut map = RoadMap::from_graph(&format!("town{rows}x{cols}"), &nodes, &edges);
        let s = BUILDING_SETBACK;
        for r in 0..rows - 1 {
            for c in 0..cols - 1 {
                let lo = Vec2::new(c as f64 * spacing + s, r as f64 * spacing + s);
                let hi = Vec2::new((c + 1) as f64 * spacing - s, (r + 1) as f64 * spacing - s);
                map.add_block(lo, hi);
            }
        }
        let lo = Vec2::new(-s, -s);
        let hi = Vec2::new((cols - 1) as f64 * spacing + s, (rows - 1) as f64 * spacing + s);
        let ring = [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
        for i in 0..4 {
            map.walls.push((ring[i], ring[(i + 1) % 4]));
        }
        let w = SIDEWALK_OFFSET;
        map.sidewalks.push(Polyline::new(vec![
            Vec2::new(-w, -w),
            Vec2::new(hi.x - s + w, -w),
            Vec2::new(hi.x - s + w, hi.y - s + w),
            Vec2::new(-w, hi.y - s + w),
            Vec2::new(-w, -w),
        ]));
        let m = 10.0;
        map.ground = Some((lo - Vec2::new(m, m), hi + Vec2::new(m, m)));
        map
    }

    /// The default desk-scale town: 3×3 intersections, 80 m apart.
    pub fn town() -> Self {
        Self::grid_town(3, 3, 80.0)
    }

    /// One straight two-way road of the given length along +x from the origin.
    pub fn straight_road(length: f64) -> Self {
        let nodes = [Node { pos: Vec2::ZERO }, Node { pos: Vec2::new(length, 0.0) }];
        RoadMap::from_graph("straight", &nodes, &[(0, 1)])
    }

    /// A single signalized four-way intersection at the origin with arms of the given length.
    pub fn four_way(arm: f64) -> Self {
        let nodes = [
            Node { pos: Vec2::ZERO },
            Node { pos: Vec2::new(arm, 0.0) },
            Node { pos: Vec2::new(0.0, arm) },
            Node { pos: Vec2::new(-arm, 0.0) },
            Node { pos: Vec2::new(0.0, -arm) },
        ];
        RoadMap::from_graph("fourway", &nodes, &[(0, 1), (0, 2), (3, 0), (4, 0)])
    }

    fn add_block(&mut self, lo: Vec2, hi: Vec2) {
        let c = [lo, Vec2::new(hi.x, lo.y), hi, Vec2::new(lo.x, hi.y)];
        for i in 0..4 {
            self.walls.push((c[i], c[(i + 1) % 4]));
        }
        let g = BUILDING_SETBACK - SIDEWALK_OFFSET;
        let (a, b) = (lo - Vec2::new(g, g), hi + Vec2::new(g, g));
        self.sidewalks.push(Polyline::new(vec![a, Vec2::new(b.x, a.y), b, Vec2::new(a.x, b.y), a]));
    }

    pub fn drivable_bounds(&self) -> Option<(Vec2, Vec2)> {
        let mut it = self.drivable.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (Vec2::new(lo.x.min(p.x), lo.y.min(p.y)), Vec2::new(hi.x.max(p.x), hi.y.max(p.y)))))
    }

    pub fn is_drivable(&self, p: Vec2) -> bool {
        self.drivable.iter().any(|poly| point_in_polygon(p, poly))
    }

    pub fn has_ground(&self, p: Vec2) -> bool {
        self.ground.map(|(lo, hi)| p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y).unwrap_or(false)
    }

    pub fn road_lanes(&self) -> impl Iterator<Item = &Lane> {
        self.lanes.iter().filter(|l| !l.is_connector())
    }

    /// True when every lane can reach every other lane ignoring direction.
    pub fn is_connected(&self) -> bool {
        if self.lanes.is_empty() {
            return false;
        }
        let n = self.lanes.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        let mut union = |a: usize, b: usize| {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            parent[ra] = rb;
        };
        for lane in &self.lanes {
            for &s in &lane.successors {
                union(lane.id, s);
            }
            for nb in [lane.left, lane.right].into_iter().flatten() {
                union(lane.id, nb);
            }
            if let LaneKind::Road { road, .. } = lane.kind {
                // Opposite directions of the same road are connected by U-turns at dead ends.
                if let Some(other) = self.lanes.iter().find(|l| matches!(l.kind, LaneKind::Road { road: r, .. } if r == road)) {
                    union(lane.id, other.id);
                }
            }
        }
        let root = find(&mut parent, 0);
        (0..n).all(|i| find(&mut parent, i) == root)
    }

    /// Lane best matching a pose: small lateral distance and aligned heading.
    pub fn nearest_lane(&self, p: Vec2, yaw: f64) -> Option<(usize, f64, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        let mut best_cost = f64::INFINITY;
        for lane in &self.lanes {
            let pr = lane.centerline.project(p);
            let h = lane.centerline.heading_at(pr.s);
            let dh = crate::geometry::wrap_angle(h - yaw).abs();
            let cost = pr.distance + 4.0 * dh;
            if cost < best_cost {
                best_cost = cost;
                best = Some((lane.id, pr.s, pr.distance));
            }
        }
        best
    }

    /// Cached world-frame raster of road, boundary and marking layers.
    pub fn raster(&self) -> Arc<MapRaster> {
        self.raster.get_or_init(|| Arc::new(MapRaster::build(self))).clone()
    }

    pub fn validate(&self) -> Result<()> {
        for lane in &self.lanes {
            for &s in &lane.successors {
                if s >= self.lanes.len() {
                    return Err(Error::InvalidArgument(format!("lane {} has dangling successor {s}", lane.id)));
                }
            }
        }
        Ok(())
    }
}

fn new_lane(id: usize, centerline: Polyline, kind: LaneKind) -> Lane {
    Lane { id, centerline, kind, successors: vec![], predecessors: vec![], left: None, right: None, light: None }
}

fn connector_curve(p0: Vec2, d0: Vec2, p1: Vec2, d1: Vec2, maneuver: Maneuver) -> Polyline {
    if maneuver == Maneuver::Straight {
        return Polyline::new(vec![p0, p1]);
    }
    // Cubic Bezier approximating a quarter circle.
    let r = (p1 - p0).dot(d0).abs();
    let k = 0.5523 * r;
    let (c0, c1) = (p0 + d0 * k, p1 - d1 * k);
    let n = 16;
    Polyline::new(
        (0..=n)
            .map(|i| {
                let t = i as f64 / n as f64;
                let u = 1.0 - t;
                p0 * (u * u * u) + c0 * (3.0 * u * u * t) + c1 * (3.0 * u * t * t) + p1 * (t * t * t)
            })
            .collect(),
    )
}

pub const RASTER_ROAD: u8 = 1;
pub const RASTER_SOLID: u8 = 2;
pub const RASTER_BROKEN: u8 = 4;
/// Painted marking surface, dashed along broken boundaries.
pub const RASTER_PAINT: u8 = 8;

/// Fine world-frame lookup raster of map layers.
#[derive(Clone, Debug)]
pub struct MapRaster {
    pub origin: Vec2,
    pub resolution: f64,
    pub rows: usize,
    pub cols: usize,
    pub flags: Vec<u8>,
}

impl MapRaster {
    pub const RESOLUTION: f64 = 0.25;

    fn build(map: &RoadMap) -> Self {
        let res = Self::RESOLUTION;
        let Some((lo, hi)) = map.ground.or(map.drivable_bounds()) else {
            return Self { origin: Vec2::ZERO, resolution: res, rows: 0, cols: 0, flags: vec![] };
        };
        let cols = ((hi.x - lo.x) / res).ceil() as usize + 1;
        let rows = ((hi.y - lo.y) / res).ceil() as usize + 1;
        let mut r = Self { origin: lo, resolution: res, rows, cols, flags: vec![0; rows * cols] };
        for poly in &map.drivable {
            r.fill(poly.iter(), 0.0, |p| point_in_polygon(p, poly), RASTER_ROAD);
        }
        for b in &map.boundaries {
            let bit = match b.kind {
                BoundaryKind::Solid => RASTER_SOLID,
                BoundaryKind::Broken => RASTER_BROKEN,
            };
            for (s0, (a, c)) in b.line.cumlen.iter().zip(b.line.segments()) {
                r.fill([a, c].iter(), RASTER_LINE_HALF_WIDTH, |p| point_segment_distance(p, a, c) <= RASTER_LINE_HALF_WIDTH, bit);
                let dashed = b.kind == BoundaryKind::Broken;
                let seg = c - a;
                let len = seg.norm();
                r.fill([a, c].iter(), MARKING_HALF_WIDTH, |p| {
                    if point_segment_distance(p, a, c) > MARKING_HALF_WIDTH {
                        return false;
                    }
                    if !dashed || len == 0.0 {
                        return true;
                    }
                    let s = s0 + (p - a).dot(seg) / len;
                    s.rem_euclid(DASH_PERIOD) < DASH_ON
                }, RASTER_PAINT);
            }
        }
        r
    }

    fn fill<'a>(&mut self, pts: impl Iterator<Item = &'a Vec2>, margin: f64, inside: impl Fn(Vec2) -> bool, bit: u8) {
        let pts: Vec<Vec2> = pts.copied().collect();
        let (mut lo, mut hi) = (pts[0], pts[0]);
        for p in &pts {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let c0 = (((lo.x - margin - self.origin.x) / self.resolution).floor().max(0.0)) as usize;
        let r0 = (((lo.y - margin - self.origin.y) / self.resolution).floor().max(0.0)) as usize;
        let c1 = (((hi.x + margin - self.origin.x) / self.resolution).ceil() as usize).min(self.cols.saturating_sub(1));
        let r1 = (((hi.y + margin - self.origin.y) / self.resolution).ceil() as usize).min(self.rows.saturating_sub(1));
        for row in r0..=r1 {
            for col in c0..=c1 {
                let p = self.origin + Vec2::new(col as f64 * self.resolution, row as f64 * self.resolution);
                if inside(p) {
                    self.flags[row * self.cols + col] |= bit;
                }
            }
        }
    }

    /// Flags at the raster node nearest to `p`; zero outside.
    pub fn at(&self, p: Vec2) -> u8 {
        let c = ((p.x - self.origin.x) / self.resolution).round();
        let r = ((p.y - self.origin.y) / self.resolution).round();
        if c < 0.0 || r < 0.0 || c as usize >= self.cols || r as usize >= self.rows {
            return 0;
        }
        self.flags[r as usize * self.cols + c as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn centerlines_inside(map: &RoadMap) {
        for lane in &map.lanes {
            let len = lane.length();
            let n = (len / 0.5).ceil() as usize;
            for i in 0..=n {
                let p = lane.centerline.point_at(len * i as f64 / n as f64);
                assert!(map.is_drivable(p), "lane {} point {:?} off the drivable area", lane.id, p);
            }
        }
    }

    #[test]
    fn town_is_connected_and_centerlines_are_drivable() {
        let map = RoadMap::town();
        map.validate().unwrap();
        assert!(map.is_connected());
        assert_eq!(map.intersections.len(), 9);
        centerlines_inside(&map);
        centerlines_inside(&RoadMap::four_way(60.0));
        centerlines_inside(&RoadMap::straight_road(200.0));
    }

    #[test]
    fn four_way_connectors() {
        let map = RoadMap::four_way(60.0);
        let ix = &map.intersections[0];
        assert!(ix.signalized);
        let count = |m: Maneuver| ix.connectors.iter().filter(|&&c| map.lanes[c].maneuver() == Some(m)).count();
        // Four approaches: two straight lanes, one left and one right each.
        assert_eq!(count(Maneuver::Straight), 8);
        assert_eq!(count(Maneuver::Left), 4);
        assert_eq!(count(Maneuver::Right), 4);
        assert_eq!(map.lights.len(), 8);
        // A left connector ends heading 90 degrees counter-clockwise from its start.
        let left = ix.connectors.iter().find(|&&c| map.lanes[c].maneuver() == Some(Maneuver::Left)).unwrap();
        let cl = &map.lanes[*left].centerline;
        let turn = crate::geometry::wrap_angle(cl.heading_at(cl.length()) - cl.heading_at(0.0));
        assert!((turn - std::f64::consts::FRAC_PI_2).abs() < 0.15);
    }

    #[test]
    fn boundary_tags_and_raster() {
        let map = RoadMap::straight_road(100.0);
        let solid = map.boundaries.iter().filter(|b| b.kind == BoundaryKind::Solid).count();
        let broken = map.boundaries.iter().filter(|b| b.kind == BoundaryKind::Broken).count();
        assert_eq!((solid, broken), (3, 2));
        let r = map.raster();
        assert_eq!(r.at(Vec2::new(50.0, 1.75)) & RASTER_ROAD, RASTER_ROAD);
        assert_eq!(r.at(Vec2::new(50.0, 0.0)) & RASTER_SOLID, RASTER_SOLID);
        assert_eq!(r.at(Vec2::new(50.0, 3.5)) & RASTER_BROKEN, RASTER_BROKEN);
        assert_eq!(r.at(Vec2::new(50.0, 20.0)), 0);
        // Paint is dashed along broken lines: on at 1 m, off at 4 m.
        assert_ne!(r.at(Vec2::new(1.0, 3.5)) & RASTER_PAINT, 0);
        assert_eq!(r.at(Vec2::new(4.0, 3.5)) & RASTER_PAINT, 0);
        assert!(!map.is_drivable(Vec2::new(50.0, 8.0)));
    }

    #[test]
    fn lane_neighbors() {
        let map = RoadMap::straight_road(100.0);
        for lane in map.road_lanes() {
            let LaneKind::Road { index, .. } = lane.kind else { unreachable!() };
            assert_eq!(lane.left.is_some(), index == 1);
            assert_eq!(lane.right.is_some(), index == 0);
        }
    }
}
