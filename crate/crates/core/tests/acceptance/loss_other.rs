use drivestack::command::Command;
use drivestack::nn::{Graph, Tensor};
use drivestack::planner::loss::loss_other;
use rand::Rng;

use super::common::rng;
use super::Outcome;

/// Per-command mean absolute error over the 2n coordinates, taken command by command.
fn brute_force(plans: &[Vec<[f64; 2]>], y: &[[f64; 2]]) -> (f64, usize) {
    let n = y.len();
    let mut best = (f64::INFINITY, usize::MAX);
    for (c, p) in plans.iter().enumerate() {
        let mut s = 0.0;
        for k in 0..n {
            s += (p[k][0] - y[k][0]).abs();
            s += (p[k][1] - y[k][1]).abs();
        }
        let v = s * (1.0 / (2 * n) as f64);
        if v < best.0 {
            best = (v, c);
        }
    }
    best
}

pub fn run() -> Outcome {
    let mut r = rng(2);
    let pairs = 500;
    let mut mismatches = 0;
    let mut ties = 0;
    for i in 0..pairs {
        let n = r.random_range(1..12);
        let y: Vec<[f64; 2]> = (0..n).map(|_| [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)]).collect();
        let mut plans: Vec<Vec<[f64; 2]>> = (0..6).map(|_| (0..n).map(|_| [r.random_range(-10.0..10.0), r.random_range(-10.0..10.0)]).collect()).collect();
        // Every fifth pair carries an exact tie between two commands.
        if i % 5 == 0 {
            let (a, b) = (r.random_range(0..6), r.random_range(0..6));
            plans[b] = plans[a].clone();
            ties += 1;
        }
        let (want, arg) = brute_force(&plans, &y);
        let g = Graph::<f64>::new();
        let data: Vec<f64> = plans.iter().flatten().flatten().copied().collect();
        let v = g.constant(Tensor::new(&[1, 6, n, 2], data));
        let (l, cmds) = loss_other(&g, v, &[y]);
        if g.item(l) != want || cmds != vec![Command::from_index(arg).unwrap()] {
            mismatches += 1;
        }
    }
    Outcome::new(mismatches == 0, format!("{mismatches} mismatches in value or argmin over {pairs} pairs ({ties} with planted ties)"))
}
