//! PID loops turning a planned trajectory into steering and pedal commands.

use serde::{Deserialize, Serialize};

use crate::microworld::world::Control;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
}

impl PidGains {
    pub const LATERAL: PidGains = PidGains { kp: 1.0, ki: 0.5, kd: 0.2 };
    pub const LONGITUDINAL: PidGains = PidGains { kp: 5.0, ki: 0.5, kd: 1.0 };
}

#[derive(Clone, Debug, PartialEq)]
pub struct PidState {
    pub gains: PidGains,
    pub integral: f64,
    /// `None` until the first update, so a fresh loop has no derivative kick.
    pub prev_error: Option<f64>,
    pub windup: f64,
}

impl PidState {
    pub fn new(gains: PidGains, windup: f64) -> Self {
        Self { gains, integral: 0.0, prev_error: None, windup }
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// Unclipped output for error `e` over a tick of `dt` seconds. The derivative is
    /// the per-tick error difference.
    pub fn update(&mut self, e: f64, dt: f64) -> f64 {
        self.integral = (self.integral + e * dt).clamp(-self.windup, self.windup);
        let d = self.prev_error.map_or(0.0, |p| e - p);
        self.prev_error = Some(e);
        self.gains.kp * e + self.gains.ki * self.integral + self.gains.kd * d
    }
}

/// Signed heading of the aim point in the ego frame (positive = left), or `None`
/// when the aim point sits at the origin.
pub fn aim_error(traj: &[[f64; 2]], aim_index: usize) -> Option<f64> {
    let p = traj.get(aim_index.min(traj.len().saturating_sub(1)))?;
    if p[0].hypot(p[1]) < 1e-6 {
        return None;
    }
    Some(p[1].atan2(p[0]))
}

/// Steering in [-1, 1] toward the aim point of an ego-frame trajectory.
pub fn lateral_control(traj: &[[f64; 2]], aim_index: usize, pid: &mut PidState, dt: f64) -> f64 {
    match aim_error(traj, aim_index) {
        Some(e) => pid.update(e, dt).clamp(-1.0, 1.0),
        None => 0.0,
    }
}

/// Speed implied by a trajectory: mean gap between consecutive waypoints over their spacing.
pub fn target_speed(traj: &[[f64; 2]], waypoint_dt: f64) -> f64 {
    if traj.len() < 2 {
        return 0.0;
    }
    let total: f64 = traj.windows(2).map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1])).sum();
    total / (traj.len() - 1) as f64 / waypoint_dt
}

/// (throttle, brake) tracking the trajectory speed from the current speed.
pub fn longitudinal_control(traj: &[[f64; 2]], speed: f64, waypoint_dt: f64, pid: &mut PidState, dt: f64) -> (f64, f64) {
    let u = pid.update(target_speed(traj, waypoint_dt) - speed, dt);
    (u.clamp(0.0, 1.0), (-u).clamp(0.0, 1.0))
}

/// Raises the brake to the classifier score when larger; a firm brake cuts the throttle.
pub fn brake_override(control: Control, brake_score: f64, release: f64) -> Control {
    let brake = control.brake.max(brake_score);
    let throttle = if brake > release { 0.0 } else { control.throttle };
    Control { steer: control.steer, throttle, brake }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn straight(step: f64, n: usize) -> Vec<[f64; 2]> {
        (1..=n).map(|i| [step * i as f64, 0.0]).collect()
    }

    #[test]
    fn straight_aim_point_gives_zero_steer() {
        let mut pid = PidState::new(PidGains::LATERAL, 5.0);
        assert_eq!(lateral_control(&straight(1.0, 10), 4, &mut pid, 0.1), 0.0);
    }

    #[test]
    fn left_aim_point_steers_left() {
        let mut tau = straight(1.0, 10);
        tau[4] = [0.0, 3.0];
        let mut pid = PidState::new(PidGains::LATERAL, 5.0);
        // 1.0 * pi/2 + 0.5 * (pi/2 * 0.1) clips to full left lock.
        assert_eq!(lateral_control(&tau, 4, &mut pid, 0.1), 1.0);
        let mut pid = PidState::new(PidGains { kp: 0.1, ki: 0.0, kd: 0.0 }, 5.0);
        assert!((lateral_control(&tau, 4, &mut pid, 0.1) - 0.1 * std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn degenerate_aim_point_gives_zero() {
        let mut pid = PidState::new(PidGains::LATERAL, 5.0);
        assert_eq!(lateral_control(&[[0.0, 0.0]; 10], 4, &mut pid, 0.1), 0.0);
        assert_eq!(pid.prev_error, None);
    }

    #[test]
    fn constant_error_grows_by_integral_term() {
        let mut pid = PidState::new(PidGains::LATERAL, 5.0);
        let (e, dt) = (0.3, 0.1);
        let outs: Vec<f64> = (0..3).map(|_| pid.update(e, dt)).collect();
        for w in outs.windows(2) {
            assert!((w[1] - w[0] - 0.5 * e * dt).abs() < 1e-12);
        }
    }

    #[test]
    fn integral_is_clamped() {
        let mut pid = PidState::new(PidGains::LATERAL, 5.0);
        for _ in 0..1000 {
            pid.update(10.0, 0.1);
        }
        assert_eq!(pid.integral, 5.0);
    }

    #[test]
    fn target_speed_from_gaps() {
        assert!((target_speed(&straight(1.0, 10), 0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matched_speed_coasts_and_stationary_plan_brakes() {
        let mut pid = PidState::new(PidGains::LONGITUDINAL, 5.0);
        assert_eq!(longitudinal_control(&straight(1.0, 10), 2.0, 0.5, &mut pid, 0.1), (0.0, 0.0));
        let mut pid = PidState::new(PidGains::LONGITUDINAL, 5.0);
        let (t, b) = longitudinal_control(&[[0.0, 0.0]; 10], 5.0, 0.5, &mut pid, 0.1);
        assert_eq!(t, 0.0);
        assert!(b > 0.0);
    }

    #[test]
    fn override_examples() {
        let c = brake_override(Control::new(0.1, 0.4, 0.2), 0.9, 0.5);
        assert_eq!((c.brake, c.throttle, c.steer), (0.9, 0.0, 0.1));
        let c0 = Control::new(0.1, 0.4, 0.2);
        assert_eq!(brake_override(c0, 0.0, 0.5), c0);
        assert_eq!(brake_override(Control::new(0.0, 0.0, 0.8), 0.3, 0.5).brake, 0.8);
    }

    proptest! {
        #[test]
        fn pid_is_linear_in_the_error_sequence(errs in prop::collection::vec(-0.4f64..0.4, 1..12), alpha in -3.0f64..3.0) {
            let mut a = PidState::new(PidGains::LONGITUDINAL, 1e9);
            let mut b = PidState::new(PidGains::LONGITUDINAL, 1e9);
            for &e in &errs {
                let ya = a.update(e, 0.1);
                let yb = b.update(alpha * e, 0.1);
                prop_assert!((yb - alpha * ya).abs() < 1e-9);
            }
        }

        #[test]
        fn override_is_monotone(b in 0.0f64..1.0, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0, t in 0.0f64..1.0) {
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let c = Control::new(0.0, t, b);
            prop_assert!(brake_override(c, lo, 0.5).brake <= brake_override(c, hi, 0.5).brake);
        }

        #[test]
        fn integral_stays_within_clamp(errs in prop::collection::vec(-50.0f64..50.0, 1..50)) {
            let mut p = PidState::new(PidGains::LATERAL, 5.0);
            for e in errs {
                p.update(e, 0.1);
                prop_assert!(p.integral.abs() <= 5.0);
            }
        }
    }
}
