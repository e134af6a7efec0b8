//! Extended Kalman filter over (x, y, yaw, speed) with GNSS and compass updates.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SymmetricEigen, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EkfConfig {
    /// Process noise spectral densities for x/y, yaw and speed.
    pub q_pos: f64,
    pub q_yaw: f64,
    pub q_speed: f64,
    pub gnss_std: f64,
    pub yaw_std: f64,
}

impl Default for EkfConfig {
    fn default() -> Self {
        Self { q_pos: 0.01, q_yaw: 0.01, q_speed: 0.05, gnss_std: 1.0, yaw_std: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoseBelief {
    pub mean: Vector4<f64>,
    pub cov: Matrix4<f64>,
}

impl PoseBelief {
    pub fn new(x: f64, y: f64, yaw: f64, v: f64, cov: Matrix4<f64>) -> Self {
        Self { mean: Vector4::new(x, y, yaw, v), cov }
    }

    pub fn is_psd(&self) -> bool {
        is_psd(&self.cov)
    }
}

pub fn is_psd(m: &Matrix4<f64>) -> bool {
    let scale = m.abs().max().max(1e-12);
    if (m - m.transpose()).abs().max() > 1e-9 * scale {
        return false;
    }
    let eig = SymmetricEigen::new(*m);
    eig.eigenvalues.iter().all(|&l| l >= -1e-9 * scale)
}

/// Constant-velocity predict followed by a position and yaw update.
pub fn ekf_step(belief: &PoseBelief, gnss: (f64, f64), imu_yaw: f64, dt: f64, cfg: &EkfConfig) -> Result<PoseBelief> {
    if !belief.is_psd() {
        return Err(Error::NotPsd);
    }
    let m = belief.mean;
    let (yaw, v) = (m[2], m[3]);
    let pred = Vector4::new(m[0] + v * yaw.cos() * dt, m[1] + v * yaw.sin() * dt, yaw, v);
    let mut f = Matrix4::identity();
    f[(0, 2)] = -v * yaw.sin() * dt;
    f[(0, 3)] = yaw.cos() * dt;
    f[(1, 2)] = v * yaw.cos() * dt;
    f[(1, 3)] = yaw.sin() * dt;
    let q = Matrix4::from_diagonal(&Vector4::new(cfg.q_pos, cfg.q_pos, cfg.q_yaw, cfg.q_speed)) * dt;
    let p = f * belief.cov * f.transpose() + q;
    let (mean, cov) = ekf_update(&pred, &p, gnss, imu_yaw, cfg);
    Ok(PoseBelief { mean, cov })
}

fn ekf_update(mean: &Vector4<f64>, p: &Matrix4<f64>, gnss: (f64, f64), imu_yaw: f64, cfg: &EkfConfig) -> (Vector4<f64>, Matrix4<f64>) {
    let mut h = Matrix3x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h[(2, 2)] = 1.0;
    let r = Matrix3::from_diagonal(&Vector3::new(cfg.gnss_std.powi(2), cfg.gnss_std.powi(2), cfg.yaw_std.powi(2)));
    let innov = Vector3::new(gnss.0 - mean[0], gnss.1 - mean[1], wrap_angle(imu_yaw - mean[2]));
    let s = h * p * h.transpose() + r;
    let Some(s_inv) = s.try_inverse() else {
        return (*mean, *p);
    };
    let k = p * h.transpose() * s_inv;
    let mut new_mean = mean + k * innov;
    new_mean[2] = wrap_angle(new_mean[2]);
    // Joseph form keeps the covariance symmetric and PSD.
    let i_kh = Matrix4::identity() - k * h;
    let cov = i_kh * p * i_kh.transpose() + k * r * k.transpose();
    (new_mean, (cov + cov.transpose()) * 0.5)
}
