use crate::morphable_model::{MorphableBasis, ParamVector, NUM_EXP, NUM_ID, PARAM_DIM, POSE_DIM};
use crate::{Error, Result};

use super::LossReport;

/// Per-parameter importance weights, max-normalised into `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WPDCWeights {
    pub weights: [f64; PARAM_DIM],
    /// The largest raw displacement, used as the divisor (0 for the uniform fallback).
    pub normalization: f64,
}

impl WPDCWeights {
    pub fn uniform() -> Self {
        WPDCWeights {
            weights: [1.0; PARAM_DIM],
            normalization: 0.0,
        }
    }
}

/// Importance of each parameter: RMS 2D vertex displacement from replacing
/// the ground-truth entry with the current one, holding the rest at
/// ground truth. Projection is linear in each single entry, so the
/// displacement is `|p_i − p_g,i|` times a closed-form per-entry factor.
pub fn wpdc_weights(
    p: &ParamVector,
    p_g: &ParamVector,
    basis: &MorphableBasis,
) -> Result<WPDCWeights> {
    if !p.is_finite() || !p_g.is_finite() {
        return Err(Error::NonFinite("parameter vector"));
    }
    let n = basis.num_vertices();
    let inv_n = 1.0 / n as f64;
    let pose = p_g.pose();
    let (gid, gexp) = (p_g.alpha_id(), p_g.alpha_exp());

    // Mean of squared ground-truth shape coordinates, per axis.
    let mut coord_ms = [0.0; 3];
    let mut col_ms = [0.0; NUM_ID + NUM_EXP];
    for v in 0..n {
        let s = basis.vertex(v, gid, gexp);
        for d in 0..3 {
            coord_ms[d] += s[d] * s[d];
        }
        for k in 0..NUM_ID + NUM_EXP {
            let a: [f64; 3] = if k < NUM_ID {
                std::array::from_fn(|d| basis.id_at(3 * v + d, k))
            } else {
                std::array::from_fn(|d| basis.exp_at(3 * v + d, k - NUM_ID))
            };
            let u = pose[0] * a[0] + pose[1] * a[1] + pose[2] * a[2];
            let w = pose[4] * a[0] + pose[5] * a[1] + pose[6] * a[2];
            col_ms[k] += u * u + w * w;
        }
    }

    let mut raw = [0.0; PARAM_DIM];
    for (i, r) in raw.iter_mut().enumerate() {
        let delta = (p.0[i] - p_g.0[i]).abs();
        let factor = if i < POSE_DIM {
            let (row, col) = (i / 4, i % 4);
            match (row, col) {
                (2, _) => 0.0,
                (_, 3) => 1.0,
                (_, c) => (coord_ms[c] * inv_n).sqrt(),
            }
        } else {
            (col_ms[i - POSE_DIM] * inv_n).sqrt()
        };
        *r = delta * factor;
    }
    let max = raw.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(WPDCWeights::uniform());
    }
    let mut weights = [0.0; PARAM_DIM];
    for (w, r) in weights.iter_mut().zip(&raw) {
        *w = r / max;
    }
    Ok(WPDCWeights {
        weights,
        normalization: max,
    })
}

/// `Σ w_i (p_i − p_g,i)²` with the weights held fixed.
///
/// The vectors need not be raw parameters: training evaluates this on
/// whitened vectors with weights computed in raw parameter space.
pub fn wpdc_with_weights(p: &ParamVector, p_g: &ParamVector, weights: &WPDCWeights) -> LossReport {
    let mut value = 0.0;
    let grad = (0..PARAM_DIM)
        .map(|i| {
            let d = p.0[i] - p_g.0[i];
            value += weights.weights[i] * d * d;
            2.0 * weights.weights[i] * d
        })
        .collect();
    LossReport {
        value,
        grad,
        components: Vec::new(),
    }
}

pub fn wpdc(p: &ParamVector, p_g: &ParamVector, basis: &MorphableBasis) -> Result<LossReport> {
    let w = wpdc_weights(p, p_g, basis)?;
    Ok(wpdc_with_weights(p, p_g, &w))
}
