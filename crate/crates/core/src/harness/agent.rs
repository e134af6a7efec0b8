//! Agents that can be evaluated closed-loop.

use nalgebra::{Matrix4, Vector4};

use super::episode::{AgentTrace, Decision, DetectionRecord, Policy, SemanticMasks, Sensors};
use crate::bev::GridSpec;
use crate::command::Command;
use crate::controller::{collision_gate, BrakeClassifier, ControlConfig, Controller, GateVehicle};
use crate::distill::Student;
use crate::error::{Error, Result};
use crate::geometry::{Pose2, Vec2};
use crate::microworld::ekf::{ekf_step, EkfConfig, PoseBelief};
use crate::microworld::expert::{expert_policy, Expert};
use crate::microworld::route::Route;
use crate::microworld::world::{Control, WorldState};
use crate::perception::detect::DetClass;
use crate::perception::model::HeadMaps;
use crate::perception::targets::sensor_pillars;

/// Never moves.
pub struct IdleAgent;

impl Policy for IdleAgent {
    fn name(&self) -> String {
        "idle".into()
    }

    fn reset(&mut self, _: &Route, _: &WorldState) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, _: &Sensors, _: &WorldState) -> Result<Decision> {
        Ok(Decision { control: Control::default(), trace: None })
    }
}

/// The scripted data-collection expert, with full world access.
#[derive(Default)]
pub struct ExpertAgent {
    expert: Option<Expert>,
}

impl Policy for ExpertAgent {
    fn name(&self) -> String {
        "expert".into()
    }

    fn reset(&mut self, route: &Route, world: &WorldState) -> Result<()> {
        self.expert = Some(Expert::new(route, world));
        Ok(())
    }

    fn act(&mut self, _: &Sensors, world: &WorldState) -> Result<Decision> {
        let ex = self.expert.as_mut().ok_or_else(|| Error::Untrained("expert agent used before reset".into()))?;
        Ok(Decision { control: expert_policy(world, ex).control, trace: None })
    }
}

/// Tracks which route goal the agent is heading for from its own pose estimate.
#[derive(Clone, Debug, Default)]
pub struct GoalTracker {
    goals: Vec<(Vec2, Command)>,
    index: usize,
    /// Goals closer than this along the heading are considered reached.
    pub min_ahead: f64,
}

impl GoalTracker {
    pub fn new(route: &Route, min_ahead: f64) -> Self {
        Self { goals: route.goals.iter().map(|g| (g.position, g.command)).collect(), index: 0, min_ahead }
    }

    /// Current goal in the frame of `pose` and its command.
    pub fn update(&mut self, pose: &Pose2) -> ([f64; 2], Command) {
        if self.goals.is_empty() {
            return ([0.0, 0.0], Command::FollowLane);
        }
        while self.index + 1 < self.goals.len() && pose.to_local(self.goals[self.index].0).x < self.min_ahead {
            self.index += 1;
        }
        let (p, c) = self.goals[self.index];
        let l = pose.to_local(p);
        ([l.x, l.y], c)
    }
}

/// Sensor-only agent: student perception and planning, EKF localization, PID control,
/// brake override and collision gating.
pub struct StudentAgent {
    pub label: String,
    pub student: Student<f32>,
    pub brake: Option<BrakeClassifier<f32>>,
    pub refine_iters: usize,
    pub control: ControlConfig,
    pub ekf: EkfConfig,
    /// Seconds between decisions.
    pub decision_dt: f64,
    controller: Controller,
    belief: Option<PoseBelief>,
    goals: GoalTracker,
}

impl StudentAgent {
    pub fn new(label: &str, student: Student<f32>, brake: Option<BrakeClassifier<f32>>, refine_iters: usize, control: ControlConfig, ekf: EkfConfig, decision_dt: f64) -> Self {
        Self {
            label: label.into(),
            student,
            brake,
            refine_iters,
            controller: Controller::new(control.clone()),
            control,
            ekf,
            decision_dt,
            belief: None,
            goals: GoalTracker::default(),
        }
    }

    fn localize(&mut self, s: &Sensors) -> Result<Pose2> {
        let b = match &self.belief {
            None => {
                let var = self.ekf.gnss_std.powi(2);
                PoseBelief::new(s.gnss[0], s.gnss[1], s.compass, s.speed, Matrix4::from_diagonal(&Vector4::new(var, var, self.ekf.yaw_std.powi(2), 0.01)))
            }
            Some(prev) => {
                let mut b = ekf_step(prev, (s.gnss[0], s.gnss[1]), s.compass, self.decision_dt, &self.ekf)?;
                // The speedometer is trusted over the position-derived estimate.
                b.mean[3] = s.speed;
                b
            }
        };
        let pose = Pose2::new(b.mean[0], b.mean[1], b.mean[2]);
        self.belief = Some(b);
        Ok(pose)
    }
}

impl Policy for StudentAgent {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn reset(&mut self, route: &Route, _: &WorldState) -> Result<()> {
        self.controller = Controller::new(self.control.clone());
        self.belief = None;
        self.goals = GoalTracker::new(route, 2.0);
        Ok(())
    }

    fn act(&mut self, s: &Sensors, _: &WorldState) -> Result<Decision> {
        let pose = self.localize(s)?;
        let (goal, cmd) = self.goals.update(&pose);
        let pcfg = &self.student.perception.cfg;
        let pillars = sensor_pillars(&s.points, &s.scores, s.half_length, s.half_width, &pcfg.grid, pcfg.max_points)?;
        let out = self.student.infer(&pillars, goal, cmd, self.refine_iters)?;
        let plan = out.ego_refined.trajectory.clone();
        let others: Vec<GateVehicle> = out
            .others
            .iter()
            .zip(&out.other_plans)
            .map(|(d, p)| GateVehicle { pose: Some(d.pose()), half_length: d.half_length, half_width: d.half_width, plans: p.clone() })
            .collect();
        let hit = collision_gate(&plan, s.half_length, s.half_width, &others, self.control.likelihood_threshold, self.control.inflation).is_some();
        let brake_score = match &self.brake {
            Some(b) => b.score(&s.priv_features)?,
            None => 0.0,
        };
        let (control, _) = self.controller.act(&plan, s.speed, brake_score, hit, self.decision_dt);
        let mut detections: Vec<DetectionRecord> = out
            .detections
            .iter()
            .map(|d| DetectionRecord {
                x: d.center.x,
                y: d.center.y,
                yaw: d.yaw,
                half_length: d.half_length,
                half_width: d.half_width,
                vehicle: d.class == DetClass::Vehicle,
                is_ego: d.is_ego,
                score: d.score,
                plans: None,
            })
            .collect();
        // `others` is a subsequence of `detections`; attach plans in order.
        let mut k = 0;
        for rec in detections.iter_mut() {
            if let Some(o) = out.others.get(k) {
                if o.center.x == rec.x && o.center.y == rec.y && o.yaw == rec.yaw {
                    rec.plans = Some(out.other_plans[k].clone());
                    k += 1;
                }
            }
        }
        let semantic = Some(semantic_masks(&out.maps, &pcfg.grid));
        Ok(Decision {
            control,
            trace: Some(AgentTrace { command: cmd, goal, pose_estimate: pose, plan, detections, semantic, brake_score, hard_stop: hit }),
        })
    }
}

/// Semantic head output thresholded at 0.5 and kept on every other cell.
pub fn semantic_masks(maps: &HeadMaps, spec: &GridSpec) -> SemanticMasks {
    let (rows, cols) = (maps.rows.div_ceil(2), maps.cols.div_ceil(2));
    let cell = spec.pillar_size * (spec.rows() / maps.rows) as f64 * 2.0;
    let c0 = spec.cell_center(0, 0);
    let layers = std::array::from_fn(|ch| {
        let mut bits = vec![0u8; (rows * cols).div_ceil(8)];
        for r in 0..rows {
            for c in 0..cols {
                if maps.semantic[maps.idx(ch, 2 * r, 2 * c)] > 0.5 {
                    let i = r * cols + c;
                    bits[i / 8] |= 1 << (i % 8);
                }
            }
        }
        bits
    });
    SemanticMasks { rows, cols, cell, origin: [c0.x, c0.y], layers }
}
