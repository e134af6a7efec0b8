//! Run configuration: one serializable tree of every knob, with `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::bev::GridSpec;
use crate::checkpoint::config_hash;
use crate::command::Command;
use crate::controller::{BrakeConfig, ControlConfig};
use crate::distill::TrainConfig;
use crate::error::{Error, Result};
use crate::harness::{EpisodeConfig, EvalRoute, Penalties};
use crate::microworld::collect::CollectConfig;
use crate::microworld::scenarios::ScenarioKind;
use crate::perception::{PerceptionConfig, PerceptionTrainConfig};
use crate::planner::{PlannerConfig, RoiTemplate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSettings {
    /// Episodes are collected until at least this many frames exist.
    pub frames: usize,
    /// Map names cycled across episodes.
    pub maps: Vec<String>,
    /// Scenarios cycled across episodes.
    pub scenarios: Vec<ScenarioKind>,
    pub episode: CollectConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerceptionSettings {
    pub pointnet_width: usize,
    pub stage1_width: usize,
    pub head_width: usize,
    pub max_points: usize,
    pub train: PerceptionTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlannerSettings {
    pub roi: RoiTemplate,
    pub conv_widths: (usize, usize),
    pub embed_dim: usize,
    pub horizon: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BrakeSettings {
    pub train: BrakeConfig,
    /// Frames sampled from the dataset for brake training.
    pub max_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub episode: EpisodeConfig,
    pub routes: Vec<EvalRoute>,
    pub presets: Vec<String>,
    pub repeats: Vec<u64>,
    /// Refinement iterations used by the evaluated student.
    pub refine_iters: usize,
    pub penalties: Penalties,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Shared by perception, capture and evaluation.
    pub grid: GridSpec,
    pub collect: CollectSettings,
    pub perception: PerceptionSettings,
    pub planner: PlannerSettings,
    pub privileged: TrainConfig,
    pub distill: TrainConfig,
    pub brake: BrakeSettings,
    pub control: ControlConfig,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PerceptionConfig::default();
        let pl = PlannerConfig::new(0);
        let routes = (0..6)
            .map(|i| EvalRoute { map: "straight".into(), scenario: ScenarioKind::Empty, seed: 100 + i })
            .chain((0..6).map(|i| EvalRoute { map: "four-way".into(), scenario: ScenarioKind::Empty, seed: 200 + i }))
            .collect();
        Self {
            seed: 0,
            grid: GridSpec::desk(),
            collect: CollectSettings {
                frames: 5000,
                maps: vec!["town".into(), "four-way".into(), "town".into(), "straight".into()],
                scenarios: ScenarioKind::ALL.to_vec(),
                episode: CollectConfig::default(),
            },
            perception: PerceptionSettings {
                pointnet_width: p.pointnet_width,
                stage1_width: p.stage1_width,
                head_width: p.head_width,
                max_points: p.max_points,
                train: PerceptionTrainConfig::default(),
            },
            planner: PlannerSettings { roi: pl.roi, conv_widths: pl.conv_widths, embed_dim: pl.embed_dim, horizon: pl.horizon },
            privileged: TrainConfig::privileged(),
            distill: TrainConfig::distill(),
            brake: BrakeSettings { train: BrakeConfig::default(), max_samples: 5000 },
            control: ControlConfig::default(),
            eval: EvalSettings {
                episode: EpisodeConfig::default(),
                routes,
                presets: vec!["clean".into()],
                repeats: vec![0, 1, 2],
                refine_iters: 5,
                penalties: Penalties::default(),
            },
        }
    }
}

/// Nested grid copies are derived from the top-level grid and are not settable.
fn is_derived_key(key: &str) -> bool {
    key.contains(".grid.") || key.ends_with(".grid") || key.ends_with(".commands")
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push(prefix.to_string()),
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()))
}

impl RunConfig {
    /// Every settable dotted key.
    pub fn keys() -> Vec<String> {
        let mut keys = vec![];
        flatten("", &serde_json::to_value(Self::default()).expect("config serializes"), &mut keys);
        keys.retain(|k| !is_derived_key(k));
        keys
    }

    /// Applies `key=value` assignments in order. Values are parsed as JSON, falling back
    /// to a bare string. Unknown keys are rejected.
    pub fn apply<'a>(&self, assignments: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let allowed = Self::keys();
        let mut tree = serde_json::to_value(self)?;
        for a in assignments {
            let (key, raw) = a.split_once('=').ok_or_else(|| Error::Config(format!("expected key=value, got {a:?}")))?;
            let key = key.trim();
            // Keys inside list-valued settings are leaves as a whole.
            if !allowed.iter().any(|k| k == key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
            let mut node = &mut tree;
            for part in key.split('.') {
                node = node.get_mut(part).ok_or_else(|| Error::Config(format!("unknown config key {key:?}")))?;
            }
            *node = parse_value(raw);
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| Error::Config(format!("invalid config value: {e}")))?;
        cfg.normalized()
    }

    /// Reads a config file of `key = value` lines; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|_| Error::InputNotFound(path.to_path_buf()))?;
        let lines: Vec<&str> = text.lines().map(|l| l.split('#').next().unwrap_or("").trim()).filter(|l| !l.is_empty()).collect();
        Self::default().apply(lines)
    }

    /// Copies the top-level grid into every nested consumer and checks invariants.
    pub fn normalized(mut self) -> Result<Self> {
        self.grid.validate()?;
        self.collect.episode.capture.grid = self.grid;
        self.eval.episode.capture.grid = self.grid;
        if self.collect.maps.is_empty() || self.collect.scenarios.is_empty() {
            return Err(Error::Config("collect.maps and collect.scenarios must be non-empty".into()));
        }
        if self.planner.horizon != self.collect.episode.horizon {
            return Err(Error::Config("planner.horizon must equal collect.episode.horizon".into()));
        }
        Ok(self)
    }

    pub fn perception_config(&self) -> PerceptionConfig {
        PerceptionConfig {
            grid: self.grid,
            pointnet_width: self.perception.pointnet_width,
            stage1_width: self.perception.stage1_width,
            head_width: self.perception.head_width,
            max_points: self.perception.max_points,
        }
    }

    pub fn planner_config(&self, in_channels: usize, refine_iters: usize) -> PlannerConfig {
        PlannerConfig {
            in_channels,
            roi: self.planner.roi,
            conv_widths: self.planner.conv_widths,
            embed_dim: self.planner.embed_dim,
            horizon: self.planner.horizon,
            refine_iters,
            commands: Command::names(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        config_hash(&serde_json::to_string(self).expect("config serializes"))
    }

    /// Writes `run_config.json` into `dir`.
    pub fn write_provenance(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(PROVENANCE_FILE), self.to_json())?;
        Ok(())
    }
}

pub const PROVENANCE_FILE: &str = "run_config.json";
