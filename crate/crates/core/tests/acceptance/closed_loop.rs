//! Full staged pipeline at desk scale, then closed-loop driving on empty routes.
//!
//! Stage outputs are cached under `ACCEPTANCE_CACHE` (default: the cargo target tmp dir)
//! keyed by the run-config hash, with the wall time of each stage recorded when it ran.
//! `ACCEPTANCE_FRESH=1` discards the cache.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use drivestack::harness::{MatrixReport, ReportRow};
use drivestack::microworld::dataset::FrameSource;
use drivestack::toolkit::pipeline::{collect, open_dataset, run_distill, run_evaluate, run_train_perception, run_train_privileged, student_agent, BRAKE_FILE, PERCEPTION_FILE, STUDENT_FILE, TEACHER_FILE};
use drivestack::toolkit::RunConfig;

use super::Outcome;

pub const MIN_FRAMES: usize = 20_000;
const RC_TARGET: f64 = 0.8;
const RUNTIME_LIMIT_H: f64 = 4.0;

/// Desk-scale pipeline settings; everything else keeps its reference default.
pub fn desk_config() -> RunConfig {
    RunConfig::default()
        .apply([
            "seed=2024",
            "collect.frames=20000",
            "perception.train.steps=2500",
            "perception.train.log_every=250",
            "privileged.batch=128",
            "privileged.steps=8000",
            "privileged.log_every=250",
            "distill.batch=4",
            "distill.steps=3500",
            "distill.log_every=250",
            r#"eval.presets=["clean"]"#,
            "eval.repeats=[0, 1, 2]",
        ])
        .expect("valid desk overrides")
}

fn cache_root(cfg: &RunConfig) -> PathBuf {
    let base = std::env::var_os("ACCEPTANCE_CACHE").map(PathBuf::from).unwrap_or_else(|| PathBuf::from(env!("CARGO_TARGET_TMPDIR")));
    base.join(format!("closed-loop-{}", &cfg.hash()[..12]))
}

struct Timings {
    path: PathBuf,
    secs: BTreeMap<String, f64>,
    cached: Vec<String>,
}

impl Timings {
    fn open(root: &Path) -> Self {
        let path = root.join("timings.json");
        let secs = std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()).unwrap_or_default();
        Self { path, secs, cached: vec![] }
    }

    /// Runs `f` unless `done` already exists from an earlier run.
    fn stage(&mut self, name: &str, done: &Path, f: impl FnOnce()) {
        if done.exists() && self.secs.contains_key(name) {
            self.cached.push(name.into());
            return;
        }
        let t = Instant::now();
        f();
        self.secs.insert(name.into(), t.elapsed().as_secs_f64());
        std::fs::write(&self.path, serde_json::to_vec_pretty(&self.secs).unwrap()).unwrap();
    }
}

fn row<'a>(r: &'a MatrixReport, name: &str) -> &'a ReportRow {
    r.rows.iter().find(|x| x.agent == name).expect("agent row")
}

pub fn run() -> Outcome {
    let cfg = desk_config();
    let root = cache_root(&cfg);
    if std::env::var("ACCEPTANCE_FRESH").is_ok_and(|v| v == "1") {
        let _ = std::fs::remove_dir_all(&root);
    }
    std::fs::create_dir_all(&root).unwrap();
    let frames = root.join("frames");
    let models = root.join("models");
    let eval = root.join("eval");
    let mut t = Timings::open(&root);

    t.stage("collect", &frames.join("collect.json"), || {
        let _ = std::fs::remove_dir_all(&frames);
        collect(&cfg, &frames).unwrap();
    });
    t.stage("train_perception", &models.join(PERCEPTION_FILE), || {
        run_train_perception(&cfg, &frames, &models).unwrap();
    });
    t.stage("train_privileged", &models.join(BRAKE_FILE), || {
        run_train_privileged(&cfg, &frames, &models).unwrap();
    });
    t.stage("distill", &models.join(STUDENT_FILE), || {
        run_distill(&cfg, &frames, &models.join(TEACHER_FILE), Some(&models.join(PERCEPTION_FILE)), &models).unwrap();
    });
    let student = models.join(STUDENT_FILE);
    let brake = models.join(BRAKE_FILE);
    t.stage("evaluate", &eval.join("report.json"), || {
        let agents = [student_agent("student-k0", &student, Some(&brake), 0), student_agent("student-k5", &student, Some(&brake), 5)];
        run_evaluate(&cfg, &agents, &eval, false).unwrap();
    });

    let n_frames = open_dataset(&frames).unwrap().len();
    let report: MatrixReport = serde_json::from_slice(&std::fs::read(eval.join("report.json")).unwrap()).unwrap();
    let (k0, k5) = (row(&report, "student-k0"), row(&report, "student-k5"));
    let hours = t.secs.values().sum::<f64>() / 3600.0;
    let episodes = report.episodes.iter().filter(|e| e.agent == "student-k5").count();
    let pass = n_frames >= MIN_FRAMES && k5.route_completion.mean >= RC_TARGET && k5.driving_score.mean >= k0.driving_score.mean && hours <= RUNTIME_LIMIT_H && episodes == 36;
    let cached = if t.cached.is_empty() { String::new() } else { format!(" (cached stages: {})", t.cached.join(", ")) };
    Outcome::new(
        pass,
        format!(
            "{n_frames} frames; student (K=5) route completion {:.3} (need {RC_TARGET}, K=0 {:.3}); driving score K=5 {:.3} vs K=0 {:.3} over {episodes} episodes each; pipeline wall time {hours:.2} h (limit {RUNTIME_LIMIT_H} h){cached}",
            k5.route_completion.mean, k0.route_completion.mean, k5.driving_score.mean, k0.driving_score.mean
        ),
    )
}
