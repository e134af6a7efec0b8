//! Route scoring from an episode log.

use serde::{Deserialize, Serialize};

use super::episode::{EpisodeLog, Infraction};
use crate::error::{Error, Result};

/// Multiplicative penalty per infraction event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub vehicle: f64,
    pub pedestrian: f64,
    pub layout: f64,
    pub red_light: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Self { vehicle: 0.60, pedestrian: 0.50, layout: 0.65, red_light: 0.70 }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct InfractionCounts<T> {
    pub vehicle: T,
    pub pedestrian: T,
    pub layout: T,
    pub red_light: T,
    pub offroad: T,
    pub blocked: T,
}

impl<T: Copy> InfractionCounts<T> {
    pub const NAMES: [&'static str; 6] = ["vehicle", "pedestrian", "layout", "red_light", "offroad", "blocked"];

    pub fn to_array(&self) -> [T; 6] {
        [self.vehicle, self.pedestrian, self.layout, self.red_light, self.offroad, self.blocked]
    }

    pub fn from_array(a: [T; 6]) -> Self {
        Self { vehicle: a[0], pedestrian: a[1], layout: a[2], red_light: a[3], offroad: a[4], blocked: a[5] }
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> InfractionCounts<U> {
        InfractionCounts::from_array(self.to_array().map(f))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    pub route_completion: f64,
    pub infraction_score: f64,
    pub driving_score: f64,
    pub counts: InfractionCounts<u32>,
    pub km: f64,
    /// Counts per kilometer, or raw counts when `per_km_raw` (nothing driven).
    pub per_km: InfractionCounts<f64>,
    pub per_km_raw: bool,
}

/// Completion credits route progress made while on the road; the infraction score is
/// the product of the per-event penalties. Off-road entries and blocking are counted
/// but carry no multiplicative penalty.
pub fn score_route(log: &EpisodeLog, penalties: &Penalties) -> Result<EpisodeScore> {
    let ticks = &log.ticks;
    if ticks.is_empty() {
        return Err(Error::InvalidArgument("empty episode log".into()));
    }
    if log.meta.route_length <= 0.0 {
        return Err(Error::InvalidArgument("route length must be positive".into()));
    }
    let mut credited = 0.0;
    let mut reached = ticks[0].progress;
    let mut meters = 0.0;
    for w in ticks.windows(2) {
        let gain = (w[1].progress - reached).max(0.0);
        reached = reached.max(w[1].progress);
        if w[1].on_road {
            credited += gain;
        }
        meters += w[1].pose.position().dist(w[0].pose.position());
    }
    let route_completion = (credited / log.meta.route_length).clamp(0.0, 1.0);
    let mut counts = InfractionCounts::<u32>::default();
    let mut infraction_score = 1.0;
    for e in ticks.iter().flat_map(|t| &t.events) {
        match e {
            Infraction::Vehicle { .. } => {
                counts.vehicle += 1;
                infraction_score *= penalties.vehicle;
            }
            Infraction::Pedestrian { .. } => {
                counts.pedestrian += 1;
                infraction_score *= penalties.pedestrian;
            }
            Infraction::Layout => {
                counts.layout += 1;
                infraction_score *= penalties.layout;
            }
            Infraction::RedLight { .. } => {
                counts.red_light += 1;
                infraction_score *= penalties.red_light;
            }
            Infraction::Offroad => counts.offroad += 1,
            Infraction::Blocked => counts.blocked += 1,
        }
    }
    let km = meters / 1000.0;
    let per_km_raw = km <= 0.0;
    let per_km = counts.map(|c| if per_km_raw { c as f64 } else { c as f64 / km });
    Ok(EpisodeScore { route_completion, infraction_score, driving_score: route_completion * infraction_score, counts, km, per_km, per_km_raw })
}
