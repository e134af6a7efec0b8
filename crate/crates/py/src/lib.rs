//! Python bindings: run configuration, pipeline stages, the student model and scoring.

use std::path::PathBuf;

use drivestack::command::Command;
use drivestack::distill::student::Student;
use drivestack::harness::{score_route, AgentKind, AgentSpec, EpisodeLog, Penalties};
use drivestack::microworld::{Dataset, FrameSource};
use drivestack::perception::targets::sensor_pillars;
use drivestack::toolkit::{cli, pipeline, replay, RunConfig};
use drivestack::Error;
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::CheckpointNotFound(_) | Error::InputNotFound(_) => PyFileNotFoundError::new_err(e.to_string()),
        Error::Io(_) | Error::Encoding(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_value<'py, S: serde::Serialize>(py: Python<'py>, v: &S) -> PyResult<Bound<'py, PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (s,))
}

/// Run configuration with dotted-key overrides.
#[pyclass(name = "Config", module = "drivestack", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (overrides = vec![]))]
    fn new(overrides: Vec<String>) -> PyResult<Self> {
        let inner = RunConfig::default().apply(overrides.iter().map(String::as_str)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: RunConfig::from_file(&path).map_err(to_py)? })
    }

    #[staticmethod]
    fn keys() -> Vec<String> {
        RunConfig::keys()
    }

    /// Returns a copy with `key=value` assignments applied.
    fn with_overrides(&self, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Self { inner: self.inner.apply(overrides.iter().map(String::as_str)).map_err(to_py)? })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        json_value(py, &self.inner)
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, hash={})", self.inner.seed, &self.inner.hash()[..12])
    }
}

/// Recorded frames loaded from a collection directory.
#[pyclass(name = "Dataset", module = "drivestack", unsendable)]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn open(root: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Dataset::open(&root).map_err(to_py)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// The full frame record as a dict.
    fn frame<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        let f = self.inner.frame(index).map_err(to_py)?;
        json_value(py, &f)
    }

    /// Student inputs for a frame: `(points, scores, goal, command, half_length, half_width)`.
    fn sensor_inputs(&self, index: usize) -> PyResult<(Vec<f32>, Vec<f32>, [f64; 2], String, f64, f64)> {
        let f = self.inner.frame(index).map_err(to_py)?;
        let ego = f.actor(f.ego_id).ok_or_else(|| PyValueError::new_err("frame has no ego record"))?;
        Ok((f.points.clone(), f.point_scores.clone(), f.ego_goal, f.ego_cmd.to_string(), ego.half_length, ego.half_width))
    }
}

/// A trained sensor-input planner.
#[pyclass(name = "Student", module = "drivestack", unsendable)]
struct PyStudent {
    inner: Student<f32>,
}

#[pymethods]
impl PyStudent {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self { inner: Student::load(&path, None).map_err(to_py)? })
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.planner.cfg.horizon
    }

    /// Detects road users, plans for every detected vehicle and refines the ego plan.
    ///
    /// `points` holds `(x, y, z, intensity)` quadruples and `scores` five class scores
    /// per point, both flattened and in the ego frame.
    #[pyo3(signature = (points, scores, goal, command, refine_iters = 0, half_length = 2.25, half_width = 1.0))]
    #[allow(clippy::too_many_arguments)]
    fn infer<'py>(
        &self,
        py: Python<'py>,
        points: Vec<f32>,
        scores: Vec<f32>,
        goal: [f64; 2],
        command: &str,
        refine_iters: usize,
        half_length: f64,
        half_width: f64,
    ) -> PyResult<Bound<'py, PyAny>> {
        let cmd: Command = command.parse().map_err(to_py)?;
        let pcfg = &self.inner.perception.cfg;
        let pillars = sensor_pillars(&points, &scores, half_length, half_width, &pcfg.grid, pcfg.max_points).map_err(to_py)?;
        let out = self.inner.infer(&pillars, goal, cmd, refine_iters).map_err(to_py)?;
        let detections: Vec<serde_json::Value> = out
            .detections
            .iter()
            .map(|d| {
                serde_json::json!({
                    "center": [d.center.x, d.center.y],
                    "yaw": d.yaw,
                    "half_length": d.half_length,
                    "half_width": d.half_width,
                    "class": format!("{:?}", d.class).to_lowercase(),
                    "score": d.score,
                    "is_ego": d.is_ego,
                })
            })
            .collect();
        let plan = |p: &drivestack::planner::model::PlanSet| {
            serde_json::json!({ "trajectories": p.trajectories, "likelihoods": p.likelihoods })
        };
        let others: Vec<serde_json::Value> = out
            .others
            .iter()
            .zip(&out.other_plans)
            .map(|(d, p)| serde_json::json!({ "center": [d.center.x, d.center.y], "yaw": d.yaw, "plans": plan(p) }))
            .collect();
        let v = serde_json::json!({
            "detections": detections,
            "others": others,
            "ego_plans": plan(&out.ego_plans),
            "ego_refined": out.ego_refined.trajectory,
        });
        json_value(py, &v)
    }
}

#[pyfunction]
fn collect<'py>(py: Python<'py>, config: &PyConfig, out: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let r = py.detach(move || pipeline::collect(&cfg, &out)).map_err(to_py)?;
    let v = serde_json::json!({ "episodes": r.episodes, "frames": r.frames, "skipped": r.skipped });
    json_value(py, &v)
}

#[pyfunction]
fn train_perception(py: Python<'_>, config: &PyConfig, data: PathBuf, out: PathBuf) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    py.detach(move || pipeline::run_train_perception(&cfg, &data, &out)).map_err(to_py)
}

/// Trains the privileged planner and the brake classifier; returns both checkpoint paths.
#[pyfunction]
fn train_privileged(py: Python<'_>, config: &PyConfig, data: PathBuf, out: PathBuf) -> PyResult<(PathBuf, PathBuf)> {
    let cfg = config.inner.clone();
    py.detach(move || pipeline::run_train_privileged(&cfg, &data, &out)).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (config, data, teacher, out, perception = None))]
fn distill(py: Python<'_>, config: &PyConfig, data: PathBuf, teacher: PathBuf, out: PathBuf, perception: Option<PathBuf>) -> PyResult<PathBuf> {
    let cfg = config.inner.clone();
    py.detach(move || pipeline::run_distill(&cfg, &data, &teacher, perception.as_deref(), &out)).map_err(to_py)
}

/// Runs the evaluation matrix. `students` maps agent names to `(checkpoint, brake, refine_iters)`.
#[pyfunction]
#[pyo3(signature = (config, out, students = vec![], baselines = true, keep_logs = false))]
fn evaluate<'py>(
    py: Python<'py>,
    config: &PyConfig,
    out: PathBuf,
    students: Vec<(String, PathBuf, Option<PathBuf>, usize)>,
    baselines: bool,
    keep_logs: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let mut agents: Vec<AgentSpec> =
        students.iter().map(|(name, s, b, k)| pipeline::student_agent(name, s, b.as_deref(), *k)).collect();
    if baselines {
        agents.push(AgentSpec { name: "expert".into(), kind: AgentKind::Expert });
        agents.push(AgentSpec { name: "idle".into(), kind: AgentKind::Idle });
    }
    let cfg = config.inner.clone();
    let report = py.detach(move || pipeline::run_evaluate(&cfg, &agents, &out, keep_logs)).map_err(to_py)?;
    let d = json_value(py, &report)?;
    d.set_item("table", report.table())?;
    Ok(d)
}

/// Scores one recorded episode directory.
#[pyfunction]
fn score_log<'py>(py: Python<'py>, log_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let log = EpisodeLog::load(&log_dir).map_err(to_py)?;
    let s = score_route(&log, &Penalties::default()).map_err(to_py)?;
    json_value(py, &s)
}

/// Renders an episode log as one SVG per tick; returns the written paths.
#[pyfunction(name = "replay")]
#[pyo3(signature = (log_dir, out, min_likelihood = 0.0))]
fn replay_log(log_dir: PathBuf, out: PathBuf, min_likelihood: f64) -> PyResult<Vec<PathBuf>> {
    let opts = replay::ReplayOptions { min_likelihood, ..Default::default() };
    replay::replay(&log_dir, &out, &opts).map_err(to_py)
}

/// Runs the command-line front end with `argv` (without the program name).
#[pyfunction(name = "cli")]
fn run_cli(py: Python<'_>, argv: Vec<String>) -> i32 {
    let mut args = vec!["drivestack".to_string()];
    args.extend(argv);
    py.detach(move || cli::run(args))
}

#[pyfunction]
fn commands() -> Vec<String> {
    Command::names()
}

#[pymodule(name = "drivestack")]
fn drivestack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyStudent>()?;
    m.add_function(wrap_pyfunction!(collect, m)?)?;
    m.add_function(wrap_pyfunction!(train_perception, m)?)?;
    m.add_function(wrap_pyfunction!(train_privileged, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score_log, m)?)?;
    m.add_function(wrap_pyfunction!(replay_log, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(commands, m)?)?;
    Ok(())
}
