//! Cost functions over the 62-dimensional parameter vector.
//!
//! Every loss returns a [`LossReport`] carrying its value and analytic
//! gradient. WPDC weights are treated as constants: callers that need a
//! fixed-weight evaluation (finite differences, batched training) use
//! [`wpdc_with_weights`] / [`merged_loss_with_weights`].

mod wing;
mod wpdc;

pub use wing::{wing, wing_landmarks, wing_scalar, wing_scalar_grad, WingConfig};
pub use wpdc::{wpdc, wpdc_weights, wpdc_with_weights, WPDCWeights};

use crate::morphable_model::{
    projection_vjp, MorphableBasis, ParamVector,
};
use crate::Result;

/// Weight of the WPDC term in the merged loss.
pub const MERGED_WPDC_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// Gradient w.r.t. the loss input: the 62 parameters, except for
    /// [`wing`] where it is w.r.t. the residual coordinates (x0, y0, x1, ...).
    pub grad: Vec<f64>,
    /// Named sub-losses of a composite loss.
    pub components: Vec<(&'static str, f64)>,
}

impl LossReport {
    fn simple(value: f64, grad: Vec<f64>) -> Self {
        LossReport {
            value,
            grad,
            components: Vec::new(),
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.iter().find(|(n, _)| *n == name).map(|&(_, v)| v)
    }
}

/// Squared L2 distance between parameter vectors.
pub fn pdc(p: &ParamVector, p_g: &ParamVector) -> LossReport {
    let mut value = 0.0;
    let grad = p
        .0
        .iter()
        .zip(&p_g.0)
        .map(|(a, b)| {
            let d = a - b;
            value += d * d;
            2.0 * d
        })
        .collect();
    LossReport::simple(value, grad)
}

/// Mean squared 2D distance between the projected vertex sets of `p` and `p_g`.
pub fn vdc(p: &ParamVector, p_g: &ParamVector, basis: &MorphableBasis) -> Result<LossReport> {
    let pred = crate::morphable_model::project_vertices(basis, p)?;
    let truth = crate::morphable_model::project_vertices(basis, p_g)?;
    let n = pred.len() as f64;
    let mut value = 0.0;
    let grads: Vec<[f64; 2]> = pred
        .iter()
        .zip(&truth)
        .map(|(a, b)| {
            let r = [a[0] - b[0], a[1] - b[1]];
            value += r[0] * r[0] + r[1] * r[1];
            [2.0 * r[0] / n, 2.0 * r[1] / n]
        })
        .collect();
    let all: Vec<u32> = (0..basis.num_vertices() as u32).collect();
    let grad = projection_vjp(basis, p, &all, &grads);
    Ok(LossReport::simple(value / n, grad.to_vec()))
}

/// `wing + 0.5·wpdc` from already computed sub-reports (both with 62-dim gradients).
pub fn combine_merged(wing: &LossReport, wpdc: &LossReport) -> LossReport {
    let grad = wing
        .grad
        .iter()
        .zip(&wpdc.grad)
        .map(|(a, b)| a + MERGED_WPDC_WEIGHT * b)
        .collect();
    LossReport {
        value: wing.value + MERGED_WPDC_WEIGHT * wpdc.value,
        grad,
        components: vec![("wing", wing.value), ("wpdc", wpdc.value)],
    }
}

/// Merged loss with WPDC weights computed at `(p, p_g)`.
pub fn merged_loss(
    p: &ParamVector,
    p_g: &ParamVector,
    basis: &MorphableBasis,
    cfg: &WingConfig,
) -> Result<LossReport> {
    let weights = wpdc_weights(p, p_g, basis)?;
    merged_loss_with_weights(p, p_g, basis, cfg, &weights)
}

pub fn merged_loss_with_weights(
    p: &ParamVector,
    p_g: &ParamVector,
    basis: &MorphableBasis,
    cfg: &WingConfig,
    weights: &WPDCWeights,
) -> Result<LossReport> {
    let w = wing_landmarks(p, p_g, basis, cfg)?;
    let d = wpdc_with_weights(p, p_g, weights);
    Ok(combine_merged(&w, &d))
}

/// Landmark residuals `project(p) − project(p_g)`.
pub fn landmark_residuals(
    p: &ParamVector,
    p_g: &ParamVector,
    basis: &MorphableBasis,
) -> Result<Vec<[f64; 2]>> {
    let a = crate::morphable_model::project(basis, p)?;
    let b = crate::morphable_model::project(basis, p_g)?;
    Ok(a.points()
        .iter()
        .zip(b.points())
        .map(|(x, y)| [x[0] - y[0], x[1] - y[1]])
        .collect())
}


#[cfg(test)]
mod tests;
