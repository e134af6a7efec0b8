//! Per-point semantic labels from scene geometry, with configurable label noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::map::{RASTER_PAINT, RASTER_ROAD};
use super::world::{ActorClass, WorldState};
use crate::geometry::Vec2;

pub const NUM_CLASSES: usize = 5;
pub const CLASS_BACKGROUND: usize = 0;
pub const CLASS_VEHICLE: usize = 1;
pub const CLASS_ROAD: usize = 2;
pub const CLASS_MARKING: usize = 3;
pub const CLASS_PEDESTRIAN: usize = 4;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "vehicles", "roads", "lane markings", "pedestrians"];

const SURFACE_TOLERANCE: f64 = 1e-3;

/// True class of a point and the actor it belongs to, if any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PointLabel {
    pub class: usize,
    pub actor: Option<u32>,
}

/// Labels each ego-frame point by the entity it lies on.
pub fn classify_points(points: &[[f32; 4]], state: &WorldState) -> Vec<PointLabel> {
    let Some(ego) = state.ego_actor() else { return vec![] };
    let raster = state.map.raster();
    let rects: Vec<_> = state.actors.iter().filter(|a| Some(a.id) != state.ego).map(|a| (a.id, a.class, a.rect())).collect();
    points
        .iter()
        .map(|p| {
            let w = ego.pose.to_world(Vec2::new(p[0] as f64, p[1] as f64));
            if p[2] == 0.0 {
                let f = raster.at(w);
                let class = if f & RASTER_PAINT != 0 {
                    CLASS_MARKING
                } else if f & RASTER_ROAD != 0 {
                    CLASS_ROAD
                } else {
                    CLASS_BACKGROUND
                };
                return PointLabel { class, actor: None };
            }
            for (id, class, r) in &rects {
                let l = (w - r.center).rotate(-r.yaw);
                let (dx, dy) = (l.x.abs(), l.y.abs());
                let inside = dx <= r.half_length + SURFACE_TOLERANCE && dy <= r.half_width + SURFACE_TOLERANCE;
                let on_edge = dx >= r.half_length - SURFACE_TOLERANCE || dy >= r.half_width - SURFACE_TOLERANCE;
                if inside && on_edge {
                    let c = match class {
                        ActorClass::Vehicle => CLASS_VEHICLE,
                        ActorClass::Pedestrian => CLASS_PEDESTRIAN,
                    };
                    return PointLabel { class: c, actor: Some(*id) };
                }
            }
            PointLabel { class: CLASS_BACKGROUND, actor: None }
        })
        .collect()
}

/// Deterministic per-tick generator for sensor noise.
pub fn sensor_rng(state: &WorldState, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(state.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ state.tick.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ salt)
}

/// Turns true labels into noisy, softened class scores. With probability
/// `noise_rate` a label is replaced by a different class drawn uniformly; the
/// one-hot vector is then mixed with the uniform distribution by `noise_rate`.
pub fn noisy_scores<R: Rng>(labels: &[PointLabel], noise_rate: f64, rng: &mut R) -> Vec<[f32; NUM_CLASSES]> {
    assert!((0.0..1.0).contains(&noise_rate), "noise rate must be in [0, 1)");
    let floor = (noise_rate / NUM_CLASSES as f64) as f32;
    let peak = (1.0 - noise_rate) as f32 + floor;
    labels
        .iter()
        .map(|l| {
            let mut c = l.class;
            if noise_rate > 0.0 && rng.random_bool(noise_rate) {
                c = (c + rng.random_range(1..NUM_CLASSES)) % NUM_CLASSES;
            }
            let mut s = [floor; NUM_CLASSES];
            s[c] = peak;
            s
        })
        .collect()
}

pub fn semantic_oracle(points: &[[f32; 4]], state: &WorldState, noise_rate: f64) -> Vec<[f32; NUM_CLASSES]> {
    let labels = classify_points(points, state);
    noisy_scores(&labels, noise_rate, &mut sensor_rng(state, 0x5E3A))
}

pub fn argmax(scores: &[f32; NUM_CLASSES]) -> usize {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::geometry::Pose2;
    use crate::microworld::lidar::{lidar_scan, LidarConfig};
    use crate::microworld::map::RoadMap;
    use crate::microworld::world::WorldConfig;

    #[test]
    fn vehicle_point_without_noise_is_one_hot() {
        let mut w = WorldState::new(Arc::new(RoadMap::straight_road(100.0)), WorldConfig::default(), 3);
        w.spawn_ego(Pose2::new(20.0, -1.75, 0.0), 0.0);
        w.spawn_vehicle(Pose2::new(30.0, -1.75, 0.0), 0.0, None);
        let pts = lidar_scan(&w, &LidarConfig::default());
        let labels = classify_points(&pts, &w);
        let scores = semantic_oracle(&pts, &w, 0.0);
        let mut seen = 0;
        for (l, s) in labels.iter().zip(&scores) {
            if l.class == CLASS_VEHICLE {
                assert_eq!(s[CLASS_VEHICLE], 1.0);
                seen += 1;
            }
            assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
        assert!(seen > 0);
        assert!(labels.iter().any(|l| l.class == CLASS_ROAD));
        assert!(labels.iter().any(|l| l.class == CLASS_MARKING));
    }

    #[test]
    fn noise_rate_matches_binomial_expectation() {
        let labels = vec![PointLabel { class: CLASS_ROAD, actor: None }; 100_000];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores = noisy_scores(&labels, 0.2, &mut rng);
        let flipped = scores.iter().filter(|s| argmax(s) != CLASS_ROAD).count() as f64 / 1e5;
        // Binomial std at n = 1e5 is about 0.0013.
        assert!((flipped - 0.2).abs() < 0.01, "{flipped}");
        for s in &scores {
            assert!((s.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        }
    }
}
