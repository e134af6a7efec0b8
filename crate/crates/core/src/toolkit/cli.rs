//! Command-line entry: `drivestack <subcommand>`. Exit codes: 0 success, 1 failure, 2 usage.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use super::config::RunConfig;
use super::pipeline::{self, AblationAxis, BRAKE_FILE, PERCEPTION_FILE, STUDENT_FILE, TEACHER_FILE};
use super::replay::{replay, ReplayOptions};
use crate::error::{Error, Result};
use crate::harness::{AgentKind, AgentSpec};

pub const DATA_ENV: &str = "DRIVESTACK_DATA";

#[derive(Parser, Debug)]
#[command(name = "drivestack", about = "Collect, train, distil and evaluate the driving stack")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key; applied after the config file, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root for frames, models and reports.
    #[arg(long, env = DATA_ENV, default_value = "data", global = true)]
    data_root: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Record expert driving logs.
    Collect {
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pre-train the perception backbone and heads.
    TrainPerception {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the privileged planner and the brake classifier.
    TrainPrivileged {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distil the privileged planner into the sensor-input student.
    Distill {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Pre-trained perception (staged regime).
        #[arg(long)]
        perception: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the closed-loop evaluation matrix.
    Evaluate {
        /// Student checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        brake: Option<PathBuf>,
        /// Refinement iterations (defaults to eval.refine_iters).
        #[arg(long)]
        refine_iters: Option<usize>,
        /// Also evaluate the idle and expert baselines.
        #[arg(long)]
        baselines: bool,
        #[arg(long)]
        keep_logs: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render logged episode internals to SVG files.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        min_likelihood: f64,
    },
    /// Expand an ablation axis into queued run configs.
    Ablate {
        #[arg(long, value_parser = ["range", "regime", "refinement"])]
        axis: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(c: &Common, extra: &[String]) -> Result<RunConfig> {
    let base = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let mut sets: Vec<String> = c.overrides.clone();
    if let Some(s) = c.seed {
        sets.push(format!("seed={s}"));
    }
    sets.extend_from_slice(extra);
    base.apply(sets.iter().map(String::as_str))
}

fn require(path: &Path) -> Result<&Path> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::CheckpointNotFound(path.to_path_buf()))
    }
}

fn execute(cli: Cli) -> Result<()> {
    let root = cli.common.data_root.clone();
    let frames_dir = root.join("frames");
    let models = root.join("models");
    match cli.command {
        Cmd::Collect { frames, out } => {
            let extra: Vec<String> = frames.map(|f| format!("collect.frames={f}")).into_iter().collect();
            let cfg = load_config(&cli.common, &extra)?;
            let out = out.unwrap_or(frames_dir);
            let r = pipeline::collect(&cfg, &out)?;
            println!("collected {} frames in {} episodes into {}", r.frames, r.episodes, out.display());
        }
        Cmd::TrainPerception { data, out } => {
            let cfg = load_config(&cli.common, &[])?;
            let p = pipeline::run_train_perception(&cfg, &data.unwrap_or(frames_dir), &out.unwrap_or(models))?;
            println!("wrote {}", p.display());
        }
        Cmd::TrainPrivileged { data, out } => {
            let cfg = load_config(&cli.common, &[])?;
            let (t, b) = pipeline::run_train_privileged(&cfg, &data.unwrap_or(frames_dir), &out.unwrap_or(models))?;
            println!("wrote {} and {}", t.display(), b.display());
        }
        Cmd::Distill { data, teacher, perception, out } => {
            let cfg = load_config(&cli.common, &[])?;
            let teacher = teacher.unwrap_or_else(|| models.join(TEACHER_FILE));
            let perception = match cfg.distill.regime {
                crate::distill::Regime::Staged => Some(perception.unwrap_or_else(|| models.join(PERCEPTION_FILE))),
                _ => perception,
            };
            if let Some(p) = &perception {
                require(p)?;
            }
            let s = pipeline::run_distill(&cfg, &data.unwrap_or(frames_dir), require(&teacher)?, perception.as_deref(), &out.unwrap_or(models))?;
            println!("wrote {}", s.display());
        }
        Cmd::Evaluate { checkpoint, brake, refine_iters, baselines, keep_logs, out } => {
            let cfg = load_config(&cli.common, &[])?;
            let student = checkpoint.unwrap_or_else(|| models.join(STUDENT_FILE));
            require(&student)?;
            let brake = match brake {
                Some(b) => Some(require(&b)?.to_path_buf()),
                None => Some(models.join(BRAKE_FILE)).filter(|p| p.exists()),
            };
            let k = refine_iters.unwrap_or(cfg.eval.refine_iters);
            let mut agents = vec![pipeline::student_agent(&format!("student-k{k}"), &student, brake.as_deref(), k)];
            if baselines {
                agents.push(AgentSpec { name: "expert".into(), kind: AgentKind::Expert });
                agents.push(AgentSpec { name: "idle".into(), kind: AgentKind::Idle });
            }
            let report = pipeline::run_evaluate(&cfg, &agents, &out.unwrap_or(root.join("eval")), keep_logs)?;
            if let Some((name, err)) = report.skipped.first() {
                return Err(Error::InvalidArgument(format!("agent {name} could not be built: {err}")));
            }
            print!("{}", report.table());
        }
        Cmd::Replay { log, out, min_likelihood } => {
            let files = replay(&log, &out, &ReplayOptions { min_likelihood, ..Default::default() })?;
            println!("wrote {} files", files.len());
        }
        Cmd::Ablate { axis, out } => {
            let cfg = load_config(&cli.common, &[])?;
            let axis: AblationAxis = axis.parse()?;
            let runs = pipeline::ablation_runs(&cfg, axis)?;
            let q = pipeline::queue_ablation(&runs, &out.unwrap_or(root.join("ablate")))?;
            println!("queued {} configs in {}", runs.len(), q.display());
        }
    }
    Ok(())
}

/// Parses `argv` (program name first), runs the subcommand and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(root: &Path, rest: &[&str]) -> Vec<String> {
        let mut v = vec!["drivestack".to_string(), "--data-root".into(), root.display().to_string()];
        v.extend(rest.iter().map(|s| s.to_string()));
        v
    }

    #[test]
    fn usage_errors_exit_2() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(argv(dir.path(), &["collect", "--frames", "many"])), 2);
        assert_eq!(run(argv(dir.path(), &["fly"])), 2);
        assert_eq!(run(argv(dir.path(), &["ablate", "--axis", "depth"])), 2);
    }

    #[test]
    fn missing_checkpoint_exits_1() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(argv(dir.path(), &["evaluate", "--checkpoint", "missing"])), 1);
        assert_eq!(run(argv(dir.path(), &["--set", "nope=1", "ablate", "--axis", "range"])), 1);
    }

    #[test]
    fn ablate_refinement_queues_three() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(run(argv(dir.path(), &["ablate", "--axis", "refinement"])), 0);
        let q = std::fs::read_to_string(dir.path().join("ablate").join("queue.txt")).unwrap();
        assert_eq!(q.lines().count(), 3);
    }
}
