//! Planar geometry shared by the simulator, perception targets and the collision gate.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(a: f64) -> Self {
        Self::new(a.cos(), a.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise rotation.
    pub fn rotate(self, a: f64) -> Vec2 {
        let (s, c) = a.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

/// Planar rigid pose. Local frame: +x forward, +y left.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub const fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    /// Local point to the parent frame.
    pub fn to_world(&self, p: Vec2) -> Vec2 {
        self.position() + p.rotate(self.yaw)
    }

    /// Parent-frame point to the local frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        (p - self.position()).rotate(-self.yaw)
    }

    /// Pose `other` (parent frame) expressed in this pose's frame.
    pub fn relative(&self, other: &Pose2) -> Pose2 {
        let p = self.to_local(other.position());
        Pose2::new(p.x, p.y, wrap_angle(other.yaw - self.yaw))
    }

    /// Local pose expressed in the parent frame.
    pub fn compose(&self, local: &Pose2) -> Pose2 {
        let p = self.to_world(local.position());
        Pose2::new(p.x, p.y, wrap_angle(self.yaw + local.yaw))
    }

    pub fn forward(&self) -> Vec2 {
        Vec2::from_angle(self.yaw)
    }
}

/// Oriented rectangle given by center, heading and half extents.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub yaw: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedRect {
    pub fn new(pose: Pose2, half_length: f64, half_width: f64) -> Self {
        Self { center: pose.position(), yaw: pose.yaw, half_length, half_width }
    }

    pub fn inflate(&self, margin: f64) -> Self {
        Self { half_length: self.half_length + margin, half_width: self.half_width + margin, ..*self }
    }

    pub fn axes(&self) -> (Vec2, Vec2) {
        let f = Vec2::from_angle(self.yaw);
        (f, f.perp())
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [Vec2; 4] {
        let (f, l) = self.axes();
        let a = f * self.half_length;
        let b = l * self.half_width;
        [self.center + a + b, self.center - a + b, self.center - a - b, self.center + a - b]
    }

    pub fn edges(&self) -> [(Vec2, Vec2); 4] {
        let c = self.corners();
        [(c[0], c[1]), (c[1], c[2]), (c[2], c[3]), (c[3], c[0])]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (f, l) = self.axes();
        let d = p - self.center;
        d.dot(f).abs() <= self.half_length && d.dot(l).abs() <= self.half_width
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        let (f, l) = self.axes();
        let c = self.center.dot(axis);
        let r = self.half_length * f.dot(axis).abs() + self.half_width * l.dot(axis).abs();
        (c - r, c + r)
    }

    /// Separating-axis overlap test; touching counts as overlap.
    pub fn overlaps(&self, other: &OrientedRect) -> bool {
        let (f1, l1) = self.axes();
        let (f2, l2) = other.axes();
        for axis in [f1, l1, f2, l2] {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            if a1 < b0 || b1 < a0 {
                return false;
            }
        }
        true
    }
}

/// Distance along the ray `origin + t * dir` (unit `dir`) to segment `a-b`, if hit.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    if t >= 0.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let e = b - a;
    let len2 = e.dot(e);
    let t = if len2 > 0.0 { ((p - a).dot(e) / len2).clamp(0.0, 1.0) } else { 0.0 };
    p.dist(a + e * t)
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Polyline with cumulative arc length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    pub cumlen: Vec<f64>,
}

/// Projection of a point onto a polyline.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub s: f64,
    pub distance: f64,
    /// Signed lateral offset, positive to the left of travel direction.
    pub lateral: f64,
    pub segment: usize,
}

impl Polyline {
    pub fn new(points: Vec<Vec2>) -> Self {
        let mut cumlen = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        for (i, p) in points.iter().enumerate() {
            if i > 0 {
                acc += p.dist(points[i - 1]);
            }
            cumlen.push(acc);
        }
        Self { points, cumlen }
    }

    pub fn length(&self) -> f64 {
        self.cumlen.last().copied().unwrap_or(0.0)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec2, Vec2)> + '_ {
        self.points.windows(2).map(|w| (w[0], w[1]))
    }

    fn locate(&self, s: f64) -> usize {
        let s = s.clamp(0.0, self.length());
        match self.cumlen.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.points.len().saturating_sub(2)),
            Err(i) => i.saturating_sub(1).min(self.points.len().saturating_sub(2)),
        }
    }

    pub fn point_at(&self, s: f64) -> Vec2 {
        if self.points.len() == 1 {
            return self.points[0];
        }
        let i = self.locate(s);
        let s = s.clamp(0.0, self.length());
        let seg = self.cumlen[i + 1] - self.cumlen[i];
        let t = if seg > 0.0 { (s - self.cumlen[i]) / seg } else { 0.0 };
        self.points[i] + (self.points[i + 1] - self.points[i]) * t
    }

    pub fn heading_at(&self, s: f64) -> f64 {
        if self.points.len() < 2 {
            return 0.0;
        }
        let i = self.locate(s);
        (self.points[i + 1] - self.points[i]).angle()
    }

    pub fn pose_at(&self, s: f64) -> Pose2 {
        let p = self.point_at(s);
        Pose2::new(p.x, p.y, self.heading_at(s))
    }

    /// Closest-point projection restricted to segments overlapping `[s_min, s_max]`.
    pub fn project_window(&self, p: Vec2, s_min: f64, s_max: f64) -> Projection {
        let mut best = Projection { s: 0.0, distance: f64::INFINITY, lateral: 0.0, segment: 0 };
        for i in 0..self.points.len().saturating_sub(1) {
            if self.cumlen[i + 1] < s_min || self.cumlen[i] > s_max {
                continue;
            }
            let (a, b) = (self.points[i], self.points[i + 1]);
            let e = b - a;
            let len2 = e.dot(e);
            let t = if len2 > 0.0 { ((p - a).dot(e) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let q = a + e * t;
            let d = p.dist(q);
            if d < best.distance {
                let lateral = e.normalized().cross(p - a);
                best = Projection { s: self.cumlen[i] + t * len2.sqrt(), distance: d, lateral, segment: i };
            }
        }
        best
    }

    pub fn project(&self, p: Vec2) -> Projection {
        self.project_window(p, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// Evenly resampled copy with spacing at most `step`.
    pub fn resample(&self, step: f64) -> Polyline {
        let len = self.length();
        let n = (len / step).ceil().max(1.0) as usize;
        Polyline::new((0..=n).map(|i| self.point_at(len * i as f64 / n as f64)).collect())
    }

    /// Copy offset laterally (positive = left).
    pub fn offset(&self, d: f64) -> Polyline {
        let n = self.points.len();
        let pts = (0..n)
            .map(|i| {
                let a = self.points[i.saturating_sub(1).min(n - 2)];
                let b = self.points[(i.saturating_sub(1).min(n - 2)) + 1];
                let dir = if i == 0 { self.points[1] - self.points[0] } else if i == n - 1 { b - a } else { self.points[i + 1] - self.points[i - 1] };
                self.points[i] + dir.normalized().perp() * d
            })
            .collect();
        Polyline::new(pts)
    }
}
