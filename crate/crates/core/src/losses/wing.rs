use crate::morphable_model::{projection_vjp, MorphableBasis, ParamVector};
use crate::{Error, Result};

use super::{landmark_residuals, LossReport};

/// Wing loss hyper-parameters; `C = ω − ω·ln(1 + ω/ε)` joins the two pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WingConfig {
    omega: f64,
    epsilon: f64,
    c: f64,
}

impl Default for WingConfig {
    fn default() -> Self {
        WingConfig::new(10.0, 2.0).unwrap()
    }
}

impl WingConfig {
    pub fn new(omega: f64, epsilon: f64) -> Result<Self> {
        if !(omega > 0.0 && omega.is_finite()) || !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "wing omega and epsilon must be positive (got {omega}, {epsilon})"
            )));
        }
        Ok(WingConfig {
            omega,
            epsilon,
            c: omega - omega * (1.0 + omega / epsilon).ln(),
        })
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
    pub fn constant(&self) -> f64 {
        self.c
    }
}

pub fn wing_scalar(x: f64, cfg: &WingConfig) -> f64 {
    let a = x.abs();
    if a < cfg.omega {
        cfg.omega * (1.0 + a / cfg.epsilon).ln()
    } else {
        a - cfg.c
    }
}

pub fn wing_scalar_grad(x: f64, cfg: &WingConfig) -> f64 {
    let a = x.abs();
    let mag = if a < cfg.omega {
        cfg.omega / (cfg.epsilon + a)
    } else {
        1.0
    };
    if x > 0.0 {
        mag
    } else if x < 0.0 {
        -mag
    } else {
        0.0
    }
}

/// Mean Wing loss over all residual coordinates; `grad` is per coordinate.
pub fn wing(residuals: &[[f64; 2]], cfg: &WingConfig) -> LossReport {
    let count = (2 * residuals.len()) as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(2 * residuals.len());
    for r in residuals {
        for &x in r {
            value += wing_scalar(x, cfg);
            grad.push(wing_scalar_grad(x, cfg) / count);
        }
    }
    LossReport {
        value: value / count,
        grad,
        components: Vec::new(),
    }
}

/// Wing loss on the 68 landmark residuals, differentiated w.r.t. `p`.
pub fn wing_landmarks(
    p: &ParamVector,
    p_g: &ParamVector,
    basis: &MorphableBasis,
    cfg: &WingConfig,
) -> Result<LossReport> {
    let residuals = landmark_residuals(p, p_g, basis)?;
    let report = wing(&residuals, cfg);
    let grads: Vec<[f64; 2]> = report.grad.chunks_exact(2).map(|g| [g[0], g[1]]).collect();
    let grad = projection_vjp(basis, p, basis.landmark_indices(), &grads);
    Ok(LossReport {
        value: report.value,
        grad: grad.to_vec(),
        components: Vec::new(),
    })
}
