//! Spatial Group-wise Enhance and Coordinate Attention.
//!
//! Both operators act on a single `C × H × W` [`FeatureMap`] (no batch axis)
//! and come with exact reverse-mode gradients.

mod ca;
mod feature_map;
mod sge;

pub use ca::{ca_backward, ca_forward, CAGrads, CAParams};
pub use feature_map::FeatureMap;
pub use sge::{sge_backward, sge_forward, SGEGrads, SGEParams};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x · sigmoid(x)`.
#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn swish_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Elementwise swish over a feature map.
pub fn swish_map(x: &FeatureMap) -> FeatureMap {
    x.map(swish)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swish_values() {
        assert_eq!(swish(0.0), 0.0);
        assert!((swish(20.0) - 20.0).abs() < 1e-7);
        assert!(swish(-40.0).abs() < 1e-15);
    }

    #[test]
    fn swish_derivative_matches_central_differences() {
        let h = 1e-5;
        for i in -400..=400 {
            let x = i as f64 * 0.025;
            let fd = (swish(x + h) - swish(x - h)) / (2.0 * h);
            assert!((fd - swish_grad(x)).abs() < 1e-7, "x = {x}");
        }
    }
}
