//! Encoding of scale, Euler angles and translation as the 12-entry pose block.
//!
//! Convention: `R = Rz(roll) · Ry(yaw) · Rx(pitch)`, yaw about the vertical
//! axis. The pose block is `[f·R | t]` stored row-major.

use std::f64::consts::FRAC_PI_2;

use crate::morphable_model::POSE_DIM;
use crate::{Error, Result};

/// Inputs closer than this to `|yaw| = pi/2` are reported as gimbal lock.
pub const GIMBAL_MARGIN: f64 = 1e-6;

const ORTHOGONALITY_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub scale: f64,
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
    pub t: [f64; 3],
}

pub fn rotation_matrix(yaw: f64, pitch: f64, roll: f64) -> [[f64; 3]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    [
        [cr * cy, cr * sy * sp - sr * cp, cr * sy * cp + sr * sp],
        [sr * cy, sr * sy * sp + cr * cp, sr * sy * cp - cr * sp],
        [-sy, cy * sp, cy * cp],
    ]
}

pub fn compose_pose(f: f64, yaw: f64, pitch: f64, roll: f64, t: [f64; 3]) -> Result<[f64; POSE_DIM]> {
    if !(f > 0.0) || !f.is_finite() {
        return Err(Error::Config(format!("pose scale must be positive, got {f}")));
    }
    if ![yaw, pitch, roll].iter().chain(&t).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("pose angles/translation"));
    }
    let r = rotation_matrix(yaw, pitch, roll);
    let mut out = [0.0; POSE_DIM];
    for row in 0..3 {
        for col in 0..3 {
            out[row * 4 + col] = f * r[row][col];
        }
        out[row * 4 + 3] = t[row];
    }
    Ok(out)
}

/// Recovers scale, Euler angles and translation from a pose block.
///
/// The scale is the mean row norm of the linear 3×3 block, which must be a
/// positively scaled proper rotation.
pub fn decompose_pose(pose: &[f64; POSE_DIM]) -> Result<Pose> {
    if !pose.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("pose block"));
    }
    let m = |r: usize, c: usize| pose[r * 4 + c];
    let norms: [f64; 3] =
        std::array::from_fn(|r| (m(r, 0).powi(2) + m(r, 1).powi(2) + m(r, 2).powi(2)).sqrt());
    let f = (norms[0] + norms[1] + norms[2]) / 3.0;
    if !(f > 1e-12) {
        return Err(Error::Decomposition(format!("degenerate linear block (scale {f:e})")));
    }
    let r: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| m(i, j) / f));
    let mut defect = 0.0f64;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((dot - target).abs());
        }
    }
    if defect > ORTHOGONALITY_TOL {
        return Err(Error::Decomposition(format!(
            "linear block is not a scaled rotation (orthogonality defect {defect:e})"
        )));
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if det < 0.0 {
        return Err(Error::Decomposition("linear block is a reflection".into()));
    }
    let yaw = (-r[2][0]).clamp(-1.0, 1.0).asin();
    if yaw.abs() >= FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(Error::GimbalLock { yaw });
    }
    let pitch = r[2][1].atan2(r[2][2]);
    let roll = r[1][0].atan2(r[0][0]);
    Ok(Pose {
        scale: f,
        yaw,
        pitch,
        roll,
        t: [pose[3], pose[7], pose[11]],
    })
}
