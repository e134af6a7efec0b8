//! Training regimes: perception pre-training, privileged planning on ground
//! truth and distillation into the sensor-input student.

pub mod matching;
pub mod privileged;
pub mod raster;
pub mod samples;
pub mod student;

use serde::{Deserialize, Serialize};

pub use privileged::{privileged_step, train_privileged, Teacher};
pub use raster::{rasterize_gt, PRIV_CHANNELS};
pub use samples::{vehicle_samples, VehicleSample};
pub use student::{distill_student, Student};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Perception,
    Privileged,
    Distill,
}

/// How the student's perception is initialized and supervised during distillation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Pre-trained perception, fine-tuned end to end with the auxiliary loss.
    Staged,
    /// Perception from scratch, trained jointly with the auxiliary loss.
    Joint,
    /// Perception from scratch, motion distillation loss only.
    None,
}

impl std::str::FromStr for Regime {
    type Err = crate::Error;
    fn from_str(s: &str) -> crate::Result<Self> {
        match s {
            "staged" => Ok(Regime::Staged),
            "joint" => Ok(Regime::Joint),
            "none" => Ok(Regime::None),
            _ => Err(crate::Error::Config(format!("unknown regime {s:?}"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::Staged => "staged",
            Regime::Joint => "joint",
            Regime::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub stage: Stage,
    pub regime: Regime,
    /// Other vehicles farther than this from the ego are not supervised (m).
    pub vehicle_range: f64,
    pub refine_iters: usize,
    /// Vehicles per step for the privileged stage, frames per step for distillation.
    pub batch: usize,
    pub lr: f64,
    pub other_weight: f64,
    pub cmd_weight: f64,
    /// Weight of the perception loss kept during distillation.
    pub aux_weight: f64,
    /// Gate for pairing ground-truth vehicles with detections (m).
    pub match_gate: f64,
    pub steps: usize,
    pub seed: u64,
    pub log_every: usize,
}

impl TrainConfig {
    pub fn privileged() -> Self {
        Self {
            stage: Stage::Privileged,
            regime: Regime::Staged,
            vehicle_range: 15.0,
            refine_iters: 5,
            batch: 512,
            lr: 3e-4,
            other_weight: crate::planner::loss::OTHER_WEIGHT,
            cmd_weight: crate::planner::loss::CMD_WEIGHT,
            aux_weight: 1.0,
            match_gate: 2.0,
            steps: 2000,
            seed: 0,
            log_every: 100,
        }
    }

    pub fn distill() -> Self {
        Self { stage: Stage::Distill, batch: 32, ..Self::privileged() }
    }
}

/// One line of the training metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub stage: Stage,
    pub terms: std::collections::BTreeMap<String, f64>,
    pub vehicles: usize,
    pub wall: f64,
}
