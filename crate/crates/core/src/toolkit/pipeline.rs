//! Stage entry points shared by the CLI, the acceptance tests and the Python bindings.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, PROVENANCE_FILE};
use crate::checkpoint::Checkpoint;
use crate::controller::{BrakeClassifier, BrakeSample};
use crate::distill::{distill_student, train_privileged, Regime, Student, Teacher, PRIV_CHANNELS};
use crate::error::{Error, Result};
use crate::harness::{map_by_name, run_matrix, AgentKind, AgentSpec, MatrixConfig, MatrixReport, NoisePreset};
use crate::microworld::collect::collect_episode;
use crate::microworld::dataset::{Dataset, FrameSource};
use crate::microworld::map::RoadMap;
use crate::microworld::scenarios::ScenarioConfig;
use crate::perception::{train_perception, Perception};

pub const PERCEPTION_FILE: &str = "perception.ckpt";
pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const BRAKE_FILE: &str = "brake.ckpt";
pub const STUDENT_FILE: &str = "student.ckpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectReport {
    pub episodes: usize,
    pub frames: usize,
    /// Episodes that could not be set up (for example no route of the requested length).
    pub skipped: Vec<(usize, String)>,
}

/// Episode seeds are derived from the run seed so that collections never overlap
/// with the evaluation routes' seeds.
pub fn episode_seed(run_seed: u64, index: usize) -> u64 {
    run_seed.wrapping_mul(1_000_003).wrapping_add(1_000_000 + index as u64)
}

/// Runs expert episodes into `out/ep-XXXXX` until at least `collect.frames` frames exist.
/// `out` must not already hold episodes.
pub fn collect(cfg: &RunConfig, out: &Path) -> Result<CollectReport> {
    if out.exists() && !crate::microworld::recorder::DrivingLog::discover(out)?.is_empty() {
        return Err(Error::Config(format!("{} already holds episodes", out.display())));
    }
    std::fs::create_dir_all(out)?;
    cfg.write_provenance(out)?;
    let c = &cfg.collect;
    let mut maps: BTreeMap<&str, Arc<RoadMap>> = BTreeMap::new();
    for m in &c.maps {
        if !maps.contains_key(m.as_str()) {
            maps.insert(m, Arc::new(map_by_name(m)?));
        }
    }
    let mut report = CollectReport { episodes: 0, frames: 0, skipped: vec![] };
    let mut i = 0;
    while report.frames < c.frames {
        // Every map meets every scenario over one full cycle.
        let map = &c.maps[i % c.maps.len()];
        let kind = c.scenarios[(i / c.maps.len()) % c.scenarios.len()];
        let dir = out.join(format!("ep-{i:05}"));
        match collect_episode(maps[map.as_str()].clone(), &c.episode, &ScenarioConfig::new(kind), episode_seed(cfg.seed, i), &dir) {
            Ok(s) => {
                report.episodes += 1;
                report.frames += s.frames;
                log::info!("episode {i} ({map}, {}): {} frames, total {}", kind.name(), s.frames, report.frames);
            }
            Err(e @ Error::NoRoute(_)) => {
                log::warn!("episode {i} skipped: {e}");
                let _ = std::fs::remove_dir_all(&dir);
                report.skipped.push((i, e.to_string()));
                if report.skipped.len() > 100 && report.episodes == 0 {
                    return Err(Error::Config("no episode could be collected with this configuration".into()));
                }
            }
            Err(e) => return Err(e),
        }
        i += 1;
    }
    std::fs::write(out.join("collect.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

pub fn open_dataset(root: &Path) -> Result<Dataset> {
    if !root.exists() {
        return Err(Error::InputNotFound(root.to_path_buf()));
    }
    let data = Dataset::open(root)?;
    if data.is_empty() {
        return Err(Error::InputNotFound(root.join("ep-*")));
    }
    Ok(data)
}

/// Line-delimited JSON records.
pub fn write_jsonl<R: Serialize>(path: &Path, records: &[R]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn stamp(cfg: &RunConfig, path: &Path) -> Result<()> {
    Checkpoint::stamp(path, &cfg.to_json())
}

#[derive(Serialize)]
struct PerceptionRecord<'a> {
    step: usize,
    #[serde(flatten)]
    terms: &'a crate::perception::LossBreakdown,
}

/// Pre-trains perception; writes `perception.ckpt` and `perception_metrics.jsonl`.
pub fn run_train_perception(cfg: &RunConfig, data_root: &Path, out: &Path) -> Result<PathBuf> {
    let data = open_dataset(data_root)?;
    std::fs::create_dir_all(out)?;
    cfg.write_provenance(out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Perception::<f32>::new(cfg.perception_config(), &mut rng)?;
    let mut tc = cfg.perception.train.clone();
    tc.seed = tc.seed.wrapping_add(cfg.seed);
    let start = std::time::Instant::now();
    let history = train_perception(&mut model, &data, &tc)?;
    log::info!("perception trained in {:.1} s", start.elapsed().as_secs_f64());
    let records: Vec<_> = history.iter().enumerate().map(|(step, terms)| PerceptionRecord { step, terms }).collect();
    write_jsonl(&out.join("perception_metrics.jsonl"), &records)?;
    let path = out.join(PERCEPTION_FILE);
    model.save(&path)?;
    stamp(cfg, &path)?;
    Ok(path)
}

/// Brake samples from up to `max` frames drawn without replacement.
pub fn brake_samples(data: &(impl FrameSource + ?Sized), max: usize, seed: u64) -> Result<Vec<BrakeSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, data.len(), max.min(data.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter()
        .map(|i| {
            let f = data.frame(i)?;
            let features = f.priv_features.as_slice().try_into().map_err(|_| Error::Encoding(format!("frame {i} has {} privileged features", f.priv_features.len())))?;
            Ok(BrakeSample { features, label: f.brake_label })
        })
        .collect()
}

/// Trains the privileged planner and the brake classifier; writes `teacher.ckpt`,
/// `brake.ckpt` and `privileged_metrics.jsonl`.
pub fn run_train_privileged(cfg: &RunConfig, data_root: &Path, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let data = open_dataset(data_root)?;
    std::fs::create_dir_all(out)?;
    cfg.write_provenance(out)?;
    let mut tc = cfg.privileged.clone();
    tc.seed = tc.seed.wrapping_add(cfg.seed);
    let mut teacher = Teacher::<f32>::new(cfg.grid, cfg.planner_config(PRIV_CHANNELS, tc.refine_iters), tc.seed)?;
    let metrics = train_privileged(&mut teacher, &data, &tc)?;
    write_jsonl(&out.join("privileged_metrics.jsonl"), &metrics)?;
    let teacher_path = out.join(TEACHER_FILE);
    teacher.save(&teacher_path)?;
    stamp(cfg, &teacher_path)?;

    let mut bc = cfg.brake.train.clone();
    bc.seed = bc.seed.wrapping_add(cfg.seed);
    let samples = brake_samples(&data, cfg.brake.max_samples, bc.seed)?;
    let mut brake = BrakeClassifier::<f32>::new(bc.hidden, bc.seed);
    let bce = brake.train(&samples, &bc)?;
    let positives = samples.iter().filter(|s| s.label).count();
    log::info!("brake classifier: BCE {bce:.4} on {} samples ({positives} brake)", samples.len());
    let brake_path = out.join(BRAKE_FILE);
    brake.save(&brake_path, cfg.grid)?;
    stamp(cfg, &brake_path)?;
    Ok((teacher_path, brake_path))
}

/// Distils the teacher into a sensor-input student; writes `student.ckpt` and
/// `distill_metrics.jsonl`. The staged regime needs a pre-trained perception checkpoint.
pub fn run_distill(cfg: &RunConfig, data_root: &Path, teacher: &Path, perception: Option<&Path>, out: &Path) -> Result<PathBuf> {
    let data = open_dataset(data_root)?;
    let teacher = Teacher::<f32>::load(teacher, Some(&cfg.grid))?;
    let mut tc = cfg.distill.clone();
    tc.seed = tc.seed.wrapping_add(cfg.seed);
    let backbone = match (tc.regime, perception) {
        (Regime::Staged, Some(p)) => Perception::<f32>::load(p, Some(&cfg.grid))?,
        (Regime::Staged, None) => return Err(Error::Config("the staged regime needs a perception checkpoint".into())),
        (_, _) => Perception::<f32>::new(cfg.perception_config(), &mut ChaCha8Rng::seed_from_u64(tc.seed))?,
    };
    std::fs::create_dir_all(out)?;
    cfg.write_provenance(out)?;
    let mut student = Student::new(backbone, cfg.planner_config(cfg.grid.channels, tc.refine_iters), tc.seed)?;
    let metrics = distill_student(&mut student, &teacher, &data, &tc)?;
    write_jsonl(&out.join("distill_metrics.jsonl"), &metrics)?;
    let path = out.join(STUDENT_FILE);
    student.save(&path)?;
    stamp(cfg, &path)?;
    Ok(path)
}

pub fn student_agent(name: &str, student: &Path, brake: Option<&Path>, refine_iters: usize) -> AgentSpec {
    AgentSpec { name: name.into(), kind: AgentKind::Student { student: student.into(), brake: brake.map(Path::to_path_buf), refine_iters } }
}

pub fn matrix_config(cfg: &RunConfig) -> Result<MatrixConfig> {
    Ok(MatrixConfig {
        routes: cfg.eval.routes.clone(),
        presets: cfg.eval.presets.iter().map(|n| NoisePreset::named(n)).collect::<Result<_>>()?,
        repeats: cfg.eval.repeats.clone(),
        episode: cfg.eval.episode.clone(),
        control: cfg.control.clone(),
        penalties: cfg.eval.penalties.clone(),
    })
}

/// Runs the evaluation matrix; writes the report and, when `keep_logs`, every episode
/// log under `out/logs`.
pub fn run_evaluate(cfg: &RunConfig, agents: &[AgentSpec], out: &Path, keep_logs: bool) -> Result<MatrixReport> {
    std::fs::create_dir_all(out)?;
    cfg.write_provenance(out)?;
    let logs = out.join("logs");
    let report = run_matrix(agents, &matrix_config(cfg)?, keep_logs.then_some(logs.as_path()))?;
    report.save(out)?;
    Ok(report)
}

/// Ablation axes and the configurations each expands to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationAxis {
    Range,
    Regime,
    Refinement,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "range" => Ok(Self::Range),
            "regime" => Ok(Self::Regime),
            "refinement" => Ok(Self::Refinement),
            _ => Err(Error::Config(format!("unknown ablation axis {s:?}"))),
        }
    }
}

/// One queued ablation run: a label and the overrides that distinguish it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub label: String,
    pub overrides: Vec<String>,
    pub config: RunConfig,
}

pub fn ablation_runs(base: &RunConfig, axis: AblationAxis) -> Result<Vec<AblationRun>> {
    let variants: Vec<(String, Vec<String>)> = match axis {
        AblationAxis::Range => [5, 15, 25]
            .iter()
            .map(|r| (format!("range-{r}"), vec![format!("privileged.vehicle_range={r}"), format!("distill.vehicle_range={r}")]))
            .collect(),
        AblationAxis::Regime => ["staged", "joint", "none"].iter().map(|r| (format!("regime-{r}"), vec![format!("distill.regime={r}")])).collect(),
        AblationAxis::Refinement => [0, 1, 5]
            .iter()
            .map(|k| (format!("k-{k}"), vec![format!("privileged.refine_iters={k}"), format!("distill.refine_iters={k}"), format!("eval.refine_iters={k}")]))
            .collect(),
    };
    variants
        .into_iter()
        .map(|(label, overrides)| {
            let config = base.apply(overrides.iter().map(String::as_str))?;
            Ok(AblationRun { label, overrides, config })
        })
        .collect()
}

/// Writes each run's config under `out/<label>/run_config.json` and a `queue.txt`
/// with one line per run.
pub fn queue_ablation(runs: &[AblationRun], out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out)?;
    let mut queue = String::new();
    for r in runs {
        let dir = out.join(&r.label);
        r.config.write_provenance(&dir)?;
        queue.push_str(&format!("{}\t{}\t{}\n", r.label, dir.join(PROVENANCE_FILE).display(), r.overrides.join(" ")));
    }
    let path = out.join("queue.txt");
    std::fs::write(&path, queue)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_axes_expand_to_three_configs() {
        let base = RunConfig::default();
        let k = ablation_runs(&base, AblationAxis::Refinement).unwrap();
        assert_eq!(k.iter().map(|r| r.config.eval.refine_iters).collect::<Vec<_>>(), vec![0, 1, 5]);
        let r = ablation_runs(&base, AblationAxis::Range).unwrap();
        assert_eq!(r.iter().map(|r| r.config.privileged.vehicle_range).collect::<Vec<_>>(), vec![5.0, 15.0, 25.0]);
        let g = ablation_runs(&base, AblationAxis::Regime).unwrap();
        assert_eq!(g.iter().map(|r| r.config.distill.regime).collect::<Vec<_>>(), vec![Regime::Staged, Regime::Joint, Regime::None]);
        let dir = tempfile::tempdir().unwrap();
        let q = queue_ablation(&k, dir.path()).unwrap();
        assert_eq!(std::fs::read_to_string(q).unwrap().lines().count(), 3);
        let back: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.path().join("k-5").join(PROVENANCE_FILE)).unwrap()).unwrap();
        assert_eq!(back.distill.refine_iters, 5);
    }

    #[test]
    fn collect_reaches_the_frame_target_and_refuses_to_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::default().apply(["collect.frames=60", "collect.episode.max_time=20"]).unwrap();
        let r = collect(&cfg, dir.path()).unwrap();
        assert!(r.frames >= 60);
        assert_eq!(open_dataset(dir.path()).unwrap().len(), r.frames);
        assert!(dir.path().join(PROVENANCE_FILE).exists());
        assert!(matches!(collect(&cfg, dir.path()), Err(Error::Config(_))));
    }

    #[test]
    fn missing_inputs_are_reported() {
        let cfg = RunConfig::default();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(run_train_perception(&cfg, &dir.path().join("nope"), dir.path()), Err(Error::InputNotFound(_))));
        let missing = dir.path().join("missing.ckpt");
        assert!(matches!(Student::<f32>::load(&missing, None), Err(Error::CheckpointNotFound(_))));
    }
}
