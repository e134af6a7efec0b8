//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line; the process exits
//! non-zero if any criterion fails. `ACCEPTANCE_ONLY=1,4` restricts the run.

mod closed_loop;
mod common;
mod determinism;
mod gate_oracle;
mod gradients;
mod loss_other;
mod overfit;
mod refinement;
mod scoring;
mod splat;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let criteria: [Criterion; 9] = [
        (1, "gradient suite", gradients::run),
        (2, "loss_other brute force", loss_other::run),
        (3, "splat/decode round trip", splat::run),
        (4, "collision gate oracle", gate_oracle::run),
        (5, "refinement contract", refinement::run),
        (6, "overfit oracles", overfit::run),
        (7, "closed-loop smoke test", closed_loop::run),
        (8, "score_route crafted logs", scoring::run),
        (9, "determinism", determinism::run),
    ];
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !out.pass {
            failed += 1;
        }
        println!("{} criterion {id} ({name}): {} [{:.1} s]", if out.pass { "PASS" } else { "FAIL" }, out.detail, start.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
