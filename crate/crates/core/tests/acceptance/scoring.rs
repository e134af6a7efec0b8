use drivestack::geometry::Pose2;
use drivestack::harness::{score_route, EpisodeLog, EpisodeMeta, Infraction, NoisePreset, Penalties, Termination, TickRecord};

use super::Outcome;

fn log(route_length: f64, progress: &[f64], off_road: &[usize], events: &[(usize, Infraction)]) -> EpisodeLog {
    let ticks = progress
        .iter()
        .enumerate()
        .map(|(i, &p)| TickRecord {
            tick: i as u64,
            time: i as f64 * 0.1,
            pose: Pose2::new(p, 0.0, 0.0),
            speed: 0.0,
            progress: p,
            on_road: !off_road.contains(&i),
            events: events.iter().filter(|(t, _)| *t == i).map(|(_, e)| e.clone()).collect(),
            control: None,
            trace: None,
        })
        .collect();
    let meta = EpisodeMeta {
        agent: "crafted".into(),
        map_id: "straight".into(),
        scenario: "empty".into(),
        seed: 0,
        repeat: 0,
        preset: NoisePreset::named("clean").unwrap(),
        route_length,
        dt: 0.1,
        time_budget: 100.0,
        termination: Termination::Timeout,
        error: None,
    };
    EpisodeLog { meta, ticks }
}

fn ramp(to: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| to * i as f64 / steps as f64).collect()
}

struct Case {
    name: &'static str,
    log: EpisodeLog,
    rc: f64,
    is: f64,
    /// vehicle, pedestrian, layout, red light, off-road, blocked
    counts: [u32; 6],
}

pub fn run() -> Outcome {
    use Infraction::*;
    let car = |id| Vehicle { id };
    let cases = vec![
        Case { name: "motionless", log: log(100.0, &[0.0; 30], &[], &[(29, Blocked)]), rc: 0.0, is: 1.0, counts: [0, 0, 0, 0, 0, 1] },
        Case { name: "clean finish", log: log(100.0, &ramp(100.0, 10), &[], &[]), rc: 1.0, is: 1.0, counts: [0; 6] },
        Case { name: "half with a vehicle hit", log: log(100.0, &ramp(50.0, 5), &[], &[(3, car(4))]), rc: 0.5, is: 0.6, counts: [1, 0, 0, 0, 0, 0] },
        Case {
            name: "two vehicles and a pedestrian",
            log: log(200.0, &ramp(150.0, 15), &[], &[(2, car(1)), (7, car(2)), (9, Pedestrian { id: 5 })]),
            rc: 0.75,
            is: 0.6 * 0.6 * 0.5,
            counts: [2, 1, 0, 0, 0, 0],
        },
        Case {
            name: "layout and red light",
            log: log(100.0, &ramp(100.0, 10), &[], &[(4, Layout), (6, RedLight { light: 0 })]),
            rc: 1.0,
            is: 0.65 * 0.7,
            counts: [0, 0, 1, 1, 0, 0],
        },
        // Gains into ticks 4 and 5 happen off the road and are not credited.
        Case { name: "off-road stretch", log: log(100.0, &ramp(100.0, 10), &[4, 5], &[(4, Offroad)]), rc: 0.8, is: 1.0, counts: [0, 0, 0, 0, 1, 0] },
        // Running maximum 0, 20, 20, 30: credited 30.
        Case { name: "progress regression", log: log(100.0, &[0.0, 20.0, 10.0, 30.0], &[], &[]), rc: 0.3, is: 1.0, counts: [0; 6] },
        Case { name: "overshoot", log: log(100.0, &ramp(120.0, 12), &[], &[]), rc: 1.0, is: 1.0, counts: [0; 6] },
        Case {
            name: "three red lights",
            log: log(100.0, &ramp(40.0, 4), &[], &[(1, RedLight { light: 0 }), (2, RedLight { light: 1 }), (3, RedLight { light: 2 })]),
            rc: 0.4,
            is: 0.7 * 0.7 * 0.7,
            counts: [0, 0, 0, 3, 0, 0],
        },
        Case {
            name: "one of each, then blocked",
            log: log(
                100.0,
                &[0.0, 25.0, 50.0, 75.0, 75.0, 75.0],
                &[],
                &[(1, car(9)), (2, Pedestrian { id: 3 }), (3, Layout), (3, RedLight { light: 2 }), (5, Blocked)],
            ),
            rc: 0.75,
            is: 0.6 * 0.5 * 0.65 * 0.7,
            counts: [1, 1, 1, 1, 0, 1],
        },
    ];
    let pen = Penalties::default();
    let mut failures = vec![];
    for c in &cases {
        let s = score_route(&c.log, &pen).unwrap();
        let ds = c.rc * c.is;
        if s.route_completion != c.rc || s.infraction_score != c.is || s.driving_score != ds || s.counts.to_array() != c.counts {
            failures.push(format!("{}: got RC {} IS {} DS {} counts {:?}", c.name, s.route_completion, s.infraction_score, s.driving_score, s.counts.to_array()));
        }
    }
    let motionless = score_route(&cases[0].log, &pen).unwrap();
    let detail = format!(
        "{}/{} crafted logs match exactly; motionless case RC {} IS {} DS {}{}",
        cases.len() - failures.len(),
        cases.len(),
        motionless.route_completion,
        motionless.infraction_score,
        motionless.driving_score,
        if failures.is_empty() { String::new() } else { format!("; {}", failures.join("; ")) }
    );
    Outcome::new(failures.is_empty() && cases.len() == 10, detail)
}
