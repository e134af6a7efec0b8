use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use drivestack::distill::Student;
use drivestack::harness::{AgentKind, AgentSpec};
use drivestack::perception::Perception;
use drivestack::toolkit::pipeline::{collect, run_evaluate, student_agent};
use drivestack::toolkit::RunConfig;

use super::common::rng;
use super::Outcome;

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig::default()
        .apply([
            "seed=11",
            "collect.frames=400",
            r#"eval.routes=[{"map": "straight", "scenario": "empty", "seed": 5}, {"map": "town", "scenario": "traffic", "seed": 6}]"#,
            r#"eval.presets=["clean", "heavy"]"#,
            "eval.repeats=[0]",
            "eval.episode.time_budget=15",
            "eval.refine_iters=5",
        ])
        .unwrap();

    let (a, b) = (dir.path().join("collect-a"), dir.path().join("collect-b"));
    collect(&cfg, &a).unwrap();
    collect(&cfg, &b).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    let logs_equal = ta == tb;

    // An untrained student exercises the full sensor path; determinism does not need skill.
    let perception = Perception::<f32>::new(cfg.perception_config(), &mut rng(12)).unwrap();
    let student = Student::new(perception, cfg.planner_config(cfg.grid.channels, 5), 13).unwrap();
    let ckpt = dir.path().join("student.ckpt");
    student.save(&ckpt).unwrap();
    let agents = vec![
        AgentSpec { name: "expert".into(), kind: AgentKind::Expert },
        AgentSpec { name: "idle".into(), kind: AgentKind::Idle },
        student_agent("student", &ckpt, None, 5),
    ];
    let (ea, eb) = (dir.path().join("eval-a"), dir.path().join("eval-b"));
    let ra = run_evaluate(&cfg, &agents, &ea, true).unwrap();
    let rb = run_evaluate(&cfg, &agents, &eb, true).unwrap();
    let tables_equal = ra == rb && ra.table() == rb.table();
    let eval_files_equal = tree(&ea) == tree(&eb);
    let episodes = ra.episodes.len();
    Outcome::new(
        logs_equal && tables_equal && eval_files_equal && !ta.is_empty() && episodes == 12,
        format!(
            "collection: {} files byte-identical: {logs_equal}; evaluation: {episodes} episodes, score tables identical: {tables_equal}, episode logs and reports byte-identical: {eval_files_equal}",
            ta.len()
        ),
    )
}
