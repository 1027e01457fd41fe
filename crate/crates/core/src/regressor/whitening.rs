//! Per-dimension standardisation of regression targets.

use crate::hash::Fingerprint;
use crate::{Error, ParamVector, Result, PARAM_DIM};

/// Dimensions whose spread is below this are left unscaled (`std = 1`).
const MIN_STD: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamWhitening {
    pub mean: [f64; PARAM_DIM],
    pub std: [f64; PARAM_DIM],
    /// Hash of the training configuration this whitening belongs to.
    pub config_hash: Fingerprint,
}

impl ParamWhitening {
    pub fn identity(config_hash: Fingerprint) -> Self {
        ParamWhitening {
            mean: [0.0; PARAM_DIM],
            std: [1.0; PARAM_DIM],
            config_hash,
        }
    }

    /// Mean and population std over `params`.
    pub fn fit<'a>(
        params: impl IntoIterator<Item = &'a ParamVector>,
        config_hash: Fingerprint,
    ) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = [0.0; PARAM_DIM];
        let mut sq = [0.0; PARAM_DIM];
        let all: Vec<&ParamVector> = params.into_iter().collect();
        for p in &all {
            n += 1;
            for i in 0..PARAM_DIM {
                sum[i] += p.0[i];
            }
        }
        if n == 0 {
            return Err(Error::Config("cannot fit whitening on zero samples".into()));
        }
        let mean: [f64; PARAM_DIM] = std::array::from_fn(|i| sum[i] / n as f64);
        for p in &all {
            for i in 0..PARAM_DIM {
                sq[i] += (p.0[i] - mean[i]).powi(2);
            }
        }
        let std = std::array::from_fn(|i| {
            let s = (sq[i] / n as f64).sqrt();
            if s > MIN_STD {
                s
            } else {
                1.0
            }
        });
        Ok(ParamWhitening {
            mean,
            std,
            config_hash,
        })
    }

    pub fn whiten(&self, p: &ParamVector) -> [f64; PARAM_DIM] {
        std::array::from_fn(|i| (p.0[i] - self.mean[i]) / self.std[i])
    }

    pub fn dewhiten(&self, z: &[f64; PARAM_DIM]) -> ParamVector {
        ParamVector(std::array::from_fn(|i| self.mean[i] + self.std[i] * z[i]))
    }

    /// Fails unless both sides were produced under the same configuration.
    pub fn check(&self, config_hash: Fingerprint) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::HashMismatch {
                what: "whitening config hash".into(),
                expected: config_hash.to_string(),
                found: self.config_hash.to_string(),
            });
        }
        Ok(())
    }
}
