//! Planar multi-ring ray casting.

use serde::{Deserialize, Serialize};

use super::world::WorldState;
use crate::geometry::{ray_segment, Vec2};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarConfig {
    pub rays: usize,
    /// Range at which each downward ring meets the ground.
    pub ground_rings: Vec<f64>,
    /// Maximum range of the horizontal ring.
    pub max_range: f64,
    pub sensor_height: f64,
    pub intensity: f32,
}

impl Default for LidarConfig {
    fn default() -> Self {
        Self { rays: 360, ground_rings: vec![6.0, 12.0, 24.0], max_range: 50.0, sensor_height: 1.6, intensity: 1.0 }
    }
}

/// Ego-frame points `(x, y, z, intensity)`.
pub type PointCloud = Vec<[f32; 4]>;

/// Obstacle segments in world frame, excluding the ego footprint.
fn obstacle_segments(state: &WorldState) -> Vec<(Vec2, Vec2)> {
    let mut segs = state.map.walls.clone();
    for a in &state.actors {
        if Some(a.id) == state.ego {
            continue;
        }
        segs.extend(a.rect().edges());
    }
    segs
}

/// Casts every ray from the ego sensor. Obstacles stop all rings; downward rings
/// that reach their ground range return a ground point where ground exists.
pub fn lidar_scan(state: &WorldState, cfg: &LidarConfig) -> PointCloud {
    let Some(ego) = state.ego_actor() else { return vec![] };
    let origin = ego.pose.position();
    let segs = obstacle_segments(state);
    let far = cfg.ground_rings.iter().copied().fold(cfg.max_range, f64::max);
    let mut out = vec![];
    for k in 0..cfg.rays {
        let az = 2.0 * std::f64::consts::PI * k as f64 / cfg.rays as f64;
        let dir = Vec2::from_angle(ego.pose.yaw + az);
        let local_dir = Vec2::from_angle(az);
        let hit = segs.iter().filter_map(|&(a, b)| ray_segment(origin, dir, a, b)).filter(|&t| t <= far).fold(f64::INFINITY, f64::min);
        for &r in &cfg.ground_rings {
            if hit <= r {
                let z = cfg.sensor_height * (1.0 - hit / r);
                let p = local_dir * hit;
                out.push([p.x as f32, p.y as f32, z as f32, cfg.intensity]);
            } else if state.map.has_ground(origin + dir * r) {
                let p = local_dir * r;
                out.push([p.x as f32, p.y as f32, 0.0, cfg.intensity]);
            }
        }
        if hit <= cfg.max_range {
            let p = local_dir * hit;
            out.push([p.x as f32, p.y as f32, cfg.sensor_height as f32, cfg.intensity]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::Pose2;
    use crate::microworld::map::RoadMap;
    use crate::microworld::world::WorldConfig;

    fn world_with(map: RoadMap) -> WorldState {
        let mut w = WorldState::new(Arc::new(map), WorldConfig::default(), 1);
        w.spawn_ego(Pose2::default(), 0.0);
        w
    }

    #[test]
    fn empty_world_has_no_points() {
        let w = world_with(RoadMap::empty("void"));
        assert!(lidar_scan(&w, &LidarConfig::default()).is_empty());
    }

    #[test]
    fn wall_hits_lie_on_the_wall() {
        let mut map = RoadMap::empty("wall");
        let (a, b) = (Vec2::new(10.0, -5.0), Vec2::new(10.0, 5.0));
        map.walls.push((a, b));
        let w = world_with(map);
        let cfg = LidarConfig { ground_rings: vec![], ..Default::default() };
        let pts = lidar_scan(&w, &cfg);
        // Oracle: a ray at azimuth θ meets the line x = 10 at y = 10 tan θ.
        let expected = (0..360)
            .filter(|k| {
                let th = (*k as f64).to_radians();
                th.cos() > 0.0 && (10.0 * th.tan()).abs() <= 5.0
            })
            .count();
        assert_eq!(pts.len(), expected);
        for p in &pts {
            assert!((p[0] as f64 - 10.0).abs() < 1e-4, "{p:?}");
            let range = (p[0] as f64).hypot(p[1] as f64);
            assert!((10.0..=(125.0f64).sqrt() + 1e-4).contains(&range));
        }
    }

    #[test]
    fn far_vehicle_gets_fewer_points() {
        let count_at = |d: f64| {
            let mut w = world_with(RoadMap::empty("void"));
            w.spawn_vehicle(Pose2::new(d, 0.0, 0.0), 0.0, None);
            lidar_scan(&w, &LidarConfig::default()).len()
        };
        let (near, far) = (count_at(5.0), count_at(25.0));
        assert!(far < near, "near {near}, far {far}");
        assert!(far > 0);
    }
}
