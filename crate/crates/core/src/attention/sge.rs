//! Spatial Group-wise Enhance.
//!
//! Per channel group: `g` is the spatial mean feature, the initial mask is
//! `c_j = <x_j, g>` at every position, normalised over positions to zero
//! mean / unit variance, then `a_j = gamma·ĉ_j + beta` and the output is
//! `x_j · sigmoid(a_j)`.

use super::{sigmoid, FeatureMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SGEParams {
    pub groups: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl SGEParams {
    /// Zero-initialised scale and shift: the block starts as a uniform 0.5 gain.
    pub fn new(groups: usize) -> Self {
        SGEParams {
            groups,
            gamma: vec![0.0; groups],
            beta: vec![0.0; groups],
            eps: 1e-5,
        }
    }

    fn check(&self, x: &FeatureMap) -> Result<usize> {
        let c = x.channels();
        if self.groups == 0 || !c.is_multiple_of(self.groups) {
            return Err(Error::Shape(format!(
                "SGE: {c} channels not divisible into {} groups",
                self.groups
            )));
        }
        if self.gamma.len() != self.groups || self.beta.len() != self.groups {
            return Err(Error::Shape("SGE: gamma/beta length != groups".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("SGE eps must be positive".into()));
        }
        Ok(c / self.groups)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SGEGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Per-group intermediate quantities shared by forward and backward.
struct GroupStats {
    /// Spatial mean per channel of the group.
    g: Vec<f64>,
    /// Normalised mask per position.
    c_hat: Vec<f64>,
    inv_std: f64,
}

fn group_stats(x: &FeatureMap, first: usize, per_group: usize, eps: f64) -> GroupStats {
    let m = x.plane();
    let g: Vec<f64> = (first..first + per_group)
        .map(|ch| x.channel(ch).iter().sum::<f64>() / m as f64)
        .collect();
    let mut mask = vec![0.0; m];
    for (k, ch) in (first..first + per_group).enumerate() {
        for (cj, xv) in mask.iter_mut().zip(x.channel(ch)) {
            *cj += xv * g[k];
        }
    }
    let mean = mask.iter().sum::<f64>() / m as f64;
    let var = mask.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
    let inv_std = 1.0 / (var + eps).sqrt();
    let c_hat = mask.iter().map(|v| (v - mean) * inv_std).collect();
    GroupStats { g, c_hat, inv_std }
}

pub fn sge_forward(x: &FeatureMap, params: &SGEParams) -> Result<FeatureMap> {
    let per_group = params.check(x)?;
    let m = x.plane();
    let mut out = x.clone();
    for grp in 0..params.groups {
        let first = grp * per_group;
        let stats = group_stats(x, first, per_group, params.eps);
        let gate: Vec<f64> = stats
            .c_hat
            .iter()
            .map(|&c| sigmoid(params.gamma[grp] * c + params.beta[grp]))
            .collect();
        for ch in first..first + per_group {
            let dst = &mut out.data_mut()[ch * m..(ch + 1) * m];
            for (d, s) in dst.iter_mut().zip(&gate) {
                *d *= s;
            }
        }
    }
    Ok(out)
}

pub fn sge_backward(
    x: &FeatureMap,
    params: &SGEParams,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, SGEGrads)> {
    let per_group = params.check(x)?;
    x.check_same_shape(upstream, "SGE upstream gradient")?;
    let m = x.plane();
    let mf = m as f64;
    let mut dx = FeatureMap::zeros(x.channels(), x.height(), x.width());
    let mut grads = SGEGrads {
        gamma: vec![0.0; params.groups],
        beta: vec![0.0; params.groups],
    };
    for grp in 0..params.groups {
        let first = grp * per_group;
        let stats = group_stats(x, first, per_group, params.eps);
        let (gamma, beta) = (params.gamma[grp], params.beta[grp]);
        let gate: Vec<f64> = stats.c_hat.iter().map(|&c| sigmoid(gamma * c + beta)).collect();

        // d(out)/d(gate) summed over the group's channels.
        let mut d_gate = vec![0.0; m];
        for ch in first..first + per_group {
            let (xc, uc) = (x.channel(ch), upstream.channel(ch));
            for j in 0..m {
                d_gate[j] += uc[j] * xc[j];
            }
        }
        let d_a: Vec<f64> = d_gate
            .iter()
            .zip(&gate)
            .map(|(d, s)| d * s * (1.0 - s))
            .collect();
        grads.gamma[grp] = d_a.iter().zip(&stats.c_hat).map(|(a, c)| a * c).sum();
        grads.beta[grp] = d_a.iter().sum();

        // Back through the normalisation.
        let d_hat: Vec<f64> = d_a.iter().map(|a| a * gamma).collect();
        let mean_d = d_hat.iter().sum::<f64>() / mf;
        let mean_dc = d_hat.iter().zip(&stats.c_hat).map(|(d, c)| d * c).sum::<f64>() / mf;
        let d_mask: Vec<f64> = d_hat
            .iter()
            .zip(&stats.c_hat)
            .map(|(d, c)| stats.inv_std * (d - mean_d - c * mean_dc))
            .collect();

        for (k, ch) in (first..first + per_group).enumerate() {
            let xc = x.channel(ch);
            // mask_j = sum_k x_kj g_k, with g_k the mean of channel k.
            let d_g: f64 = d_mask.iter().zip(xc).map(|(d, v)| d * v).sum();
            let uc = upstream.channel(ch);
            let dst = &mut dx.data_mut()[ch * m..(ch + 1) * m];
            for j in 0..m {
                dst[j] = uc[j] * gate[j] + d_mask[j] * stats.g[k] + d_g / mf;
            }
        }
    }
    Ok((dx, grads))
}
