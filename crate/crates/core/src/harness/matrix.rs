//! Evaluation matrix over agents, routes, noise presets and repeats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::agent::{ExpertAgent, IdleAgent, StudentAgent};
use super::episode::{run_episode, EpisodeConfig, NoisePreset, Policy};
use super::score::{score_route, EpisodeScore, InfractionCounts, Penalties};
use crate::controller::{BrakeClassifier, ControlConfig};
use crate::distill::Student;
use crate::error::{Error, Result};
use crate::microworld::map::RoadMap;
use crate::microworld::scenarios::{ScenarioConfig, ScenarioKind};

/// Maps addressable by name.
pub fn map_by_name(name: &str) -> Result<RoadMap> {
    match name {
        "town" => Ok(RoadMap::town()),
        "straight" => Ok(RoadMap::straight_road(200.0)),
        "four-way" => Ok(RoadMap::four_way(80.0)),
        _ => Err(Error::InvalidArgument(format!("unknown map {name:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRoute {
    pub map: String,
    pub scenario: ScenarioKind,
    /// Seeds the route and the scenario actors.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AgentKind {
    Idle,
    Expert,
    Student { student: PathBuf, brake: Option<PathBuf>, refine_iters: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub kind: AgentKind,
}

impl AgentSpec {
    pub fn build(&self, control: &ControlConfig, episode: &EpisodeConfig) -> Result<Box<dyn Policy>> {
        Ok(match &self.kind {
            AgentKind::Idle => Box::new(IdleAgent),
            AgentKind::Expert => Box::new(ExpertAgent::default()),
            AgentKind::Student { student, brake, refine_iters } => {
                let s = Student::<f32>::load(student, Some(&episode.capture.grid))?;
                let b = brake.as_deref().map(BrakeClassifier::<f32>::load).transpose()?;
                let dt = episode.world.dt * episode.control_every as f64;
                Box::new(StudentAgent::new(&self.name, s, b, *refine_iters, control.clone(), episode.ekf.clone(), dt))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixConfig {
    pub routes: Vec<EvalRoute>,
    pub presets: Vec<NoisePreset>,
    pub repeats: Vec<u64>,
    pub episode: EpisodeConfig,
    pub control: ControlConfig,
    pub penalties: Penalties,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self::default();
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub agent: String,
    pub map: String,
    pub scenario: String,
    pub seed: u64,
    pub preset: String,
    pub repeat: u64,
    pub score: EpisodeScore,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    pub episodes: usize,
    pub driving_score: Stat,
    pub route_completion: Stat,
    pub infraction_score: Stat,
    pub per_km: InfractionCounts<Stat>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub rows: Vec<ReportRow>,
    /// Agents that could not be built, with the reason.
    pub skipped: Vec<(String, String)>,
    pub episodes: Vec<EpisodeResult>,
}

impl MatrixReport {
    pub const COLUMNS: [&'static str; 10] = ["agent", "DS", "RC", "IS", "vehicle/km", "pedestrian/km", "layout/km", "red_light/km", "offroad/km", "blocked/km"];

    /// Tab-separated table, one row per agent, `mean±std` cells.
    pub fn table(&self) -> String {
        let mut s = Self::COLUMNS.join("\t");
        s.push('\n');
        let cell = |st: &Stat| format!("{:.4}±{:.4}", st.mean, st.std);
        for r in &self.rows {
            let mut cells = vec![r.agent.clone(), cell(&r.driving_score), cell(&r.route_completion), cell(&r.infraction_score)];
            cells.extend(r.per_km.to_array().iter().map(cell));
            s.push_str(&cells.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}: {} episodes, DS {:.1} ± {:.1}, RC {:.1} ± {:.1}, IS {:.2} ± {:.2}",
                r.agent,
                r.episodes,
                100.0 * r.driving_score.mean,
                100.0 * r.driving_score.std,
                100.0 * r.route_completion.mean,
                100.0 * r.route_completion.std,
                r.infraction_score.mean,
                r.infraction_score.std
            );
        }
        for (a, why) in &self.skipped {
            let _ = writeln!(s, "{a}: skipped ({why})");
        }
        s
    }

    /// Writes `report.json`, `report.tsv` and `summary.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(self).map_err(|e| Error::Encoding(e.to_string()))?)?;
        std::fs::write(dir.join("report.tsv"), self.table())?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }
}

pub fn aggregate(agent: &str, results: &[EpisodeResult]) -> ReportRow {
    let pick = |f: &dyn Fn(&EpisodeScore) -> f64| Stat::of(&results.iter().map(|r| f(&r.score)).collect::<Vec<_>>());
    let per_km = InfractionCounts::from_array(std::array::from_fn(|i| pick(&|s: &EpisodeScore| s.per_km.to_array()[i])));
    ReportRow {
        agent: agent.into(),
        episodes: results.len(),
        driving_score: pick(&|s| s.driving_score),
        route_completion: pick(&|s| s.route_completion),
        infraction_score: pick(&|s| s.infraction_score),
        per_km,
    }
}

/// Runs every agent on routes × presets × repeats. Episode logs go under `log_dir`
/// when given, one directory per episode.
pub fn run_matrix(agents: &[AgentSpec], cfg: &MatrixConfig, log_dir: Option<&Path>) -> Result<MatrixReport> {
    if agents.is_empty() {
        return Err(Error::InvalidArgument("no agent configurations".into()));
    }
    let mut maps: BTreeMap<String, Arc<RoadMap>> = BTreeMap::new();
    for r in &cfg.routes {
        if !maps.contains_key(&r.map) {
            maps.insert(r.map.clone(), Arc::new(map_by_name(&r.map)?));
        }
    }
    let mut report = MatrixReport { rows: vec![], skipped: vec![], episodes: vec![] };
    for spec in agents {
        let mut policy = match spec.build(&cfg.control, &cfg.episode) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {}: {e}", spec.name);
                report.skipped.push((spec.name.clone(), e.to_string()));
                continue;
            }
        };
        let mut results = vec![];
        for (ri, route) in cfg.routes.iter().enumerate() {
            for preset in &cfg.presets {
                for &repeat in &cfg.repeats {
                    let scen = ScenarioConfig::new(route.scenario);
                    let log = run_episode(policy.as_mut(), maps[&route.map].clone(), &scen, route.seed, repeat, preset, &cfg.episode)?;
                    if let Some(dir) = log_dir {
                        log.save(&dir.join(&spec.name).join(format!("r{ri:03}-{}-{}-{}", route.map, preset.name, repeat)))?;
                    }
                    let score = score_route(&log, &cfg.penalties)?;
                    log::info!("{} route {ri} {} repeat {repeat}: DS {:.3} RC {:.3}", spec.name, preset.name, score.driving_score, score.route_completion);
                    results.push(EpisodeResult {
                        agent: spec.name.clone(),
                        map: route.map.clone(),
                        scenario: route.scenario.name().into(),
                        seed: route.seed,
                        preset: preset.name.clone(),
                        repeat,
                        score,
                    });
                }
            }
        }
        report.rows.push(aggregate(&spec.name, &results));
        report.episodes.extend(results);
    }
    Ok(report)
}
