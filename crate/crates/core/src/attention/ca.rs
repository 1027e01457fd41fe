//! Coordinate Attention.
//!
//! `z^h` / `z^w` are per-channel means along width / height, concatenated
//! into a `C × (H + W)` strip, mixed by a 1×1 convolution `F_1` and swish,
//! split back, and turned into per-row and per-column sigmoid gates by
//! `F_h` and `F_w`. The output is `x_c(i,j) · g^h_c(i) · g^w_c(j)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{sigmoid, swish, swish_grad, FeatureMap};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CAParams {
    pub reduction: usize,
    pub channels: usize,
    /// Width of the intermediate strip.
    pub mid: usize,
    /// `mid × C`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `C × mid`.
    pub wh: Vec<f64>,
    pub bh: Vec<f64>,
    /// `C × mid`.
    pub ww: Vec<f64>,
    pub bw: Vec<f64>,
}

impl CAParams {
    /// All-zero weights; the intermediate width is `max(C / r, min_mid)`.
    pub fn zeros(channels: usize, reduction: usize, min_mid: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Shape(format!(
                "CA: {channels} channels not divisible by reduction {reduction}"
            )));
        }
        let mid = (channels / reduction).max(min_mid).max(1);
        Ok(CAParams {
            reduction,
            channels,
            mid,
            w1: vec![0.0; mid * channels],
            b1: vec![0.0; mid],
            wh: vec![0.0; channels * mid],
            bh: vec![0.0; channels],
            ww: vec![0.0; channels * mid],
            bw: vec![0.0; channels],
        })
    }

    /// Gaussian weights with fan-in scaling, zero biases.
    pub fn random(
        channels: usize,
        reduction: usize,
        min_mid: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut p = Self::zeros(channels, reduction, min_mid)?;
        let s1 = (1.0 / channels as f64).sqrt();
        let s2 = (1.0 / p.mid as f64).sqrt();
        for v in p.w1.iter_mut() {
            *v = s1 * rng.sample::<f64, _>(StandardNormal);
        }
        for v in p.wh.iter_mut().chain(p.ww.iter_mut()) {
            *v = s2 * rng.sample::<f64, _>(StandardNormal);
        }
        Ok(p)
    }

    fn check(&self, x: &FeatureMap) -> Result<()> {
        let c = x.channels();
        if self.reduction == 0 || !c.is_multiple_of(self.reduction) {
            return Err(Error::Shape(format!(
                "CA: {c} channels not divisible by reduction {}",
                self.reduction
            )));
        }
        if c != self.channels {
            return Err(Error::Shape(format!(
                "CA: parameters built for {} channels, input has {c}",
                self.channels
            )));
        }
        let (m, c) = (self.mid, self.channels);
        if self.w1.len() != m * c
            || self.b1.len() != m
            || self.wh.len() != c * m
            || self.ww.len() != c * m
            || self.bh.len() != c
            || self.bw.len() != c
        {
            return Err(Error::Shape("CA: inconsistent parameter sizes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CAGrads {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub wh: Vec<f64>,
    pub bh: Vec<f64>,
    pub ww: Vec<f64>,
    pub bw: Vec<f64>,
}

struct Forward {
    /// `C × (H + W)` pooled strip.
    z: Vec<f64>,
    /// `mid × (H + W)` pre-activation of `F_1`.
    u: Vec<f64>,
    /// `C × H` row gates.
    gh: Vec<f64>,
    /// `C × W` column gates.
    gw: Vec<f64>,
}

fn gates(x: &FeatureMap, p: &CAParams) -> Forward {
    let (c, h, w) = x.shape();
    let l = h + w;
    let mut z = vec![0.0; c * l];
    for ch in 0..c {
        let plane = x.channel(ch);
        for i in 0..h {
            let row = &plane[i * w..(i + 1) * w];
            z[ch * l + i] = row.iter().sum::<f64>() / w as f64;
            for (j, v) in row.iter().enumerate() {
                z[ch * l + h + j] += v / h as f64;
            }
        }
    }
    let mid = p.mid;
    let mut u = vec![0.0; mid * l];
    for m in 0..mid {
        let dst = &mut u[m * l..(m + 1) * l];
        dst.fill(p.b1[m]);
        for ch in 0..c {
            let wt = p.w1[m * c + ch];
            for (d, zv) in dst.iter_mut().zip(&z[ch * l..(ch + 1) * l]) {
                *d += wt * zv;
            }
        }
    }
    let f: Vec<f64> = u.iter().map(|&v| swish(v)).collect();
    let mut gh = vec![0.0; c * h];
    let mut gw = vec![0.0; c * w];
    for ch in 0..c {
        for i in 0..h {
            let mut acc = p.bh[ch];
            for m in 0..mid {
                acc += p.wh[ch * mid + m] * f[m * l + i];
            }
            gh[ch * h + i] = sigmoid(acc);
        }
        for j in 0..w {
            let mut acc = p.bw[ch];
            for m in 0..mid {
                acc += p.ww[ch * mid + m] * f[m * l + h + j];
            }
            gw[ch * w + j] = sigmoid(acc);
        }
    }
    Forward { z, u, gh, gw }
}

pub fn ca_forward(x: &FeatureMap, params: &CAParams) -> Result<FeatureMap> {
    params.check(x)?;
    let (c, h, w) = x.shape();
    let fw = gates(x, params);
    let mut out = x.clone();
    for ch in 0..c {
        for i in 0..h {
            let gh = fw.gh[ch * h + i];
            for j in 0..w {
                *out.at_mut(ch, i, j) *= gh * fw.gw[ch * w + j];
            }
        }
    }
    Ok(out)
}

pub fn ca_backward(
    x: &FeatureMap,
    params: &CAParams,
    upstream: &FeatureMap,
) -> Result<(FeatureMap, CAGrads)> {
    params.check(x)?;
    x.check_same_shape(upstream, "CA upstream gradient")?;
    let (c, h, w) = x.shape();
    let (mid, l) = (params.mid, h + w);
    let fw = gates(x, params);

    let mut dx = FeatureMap::zeros(c, h, w);
    let mut d_gh = vec![0.0; c * h];
    let mut d_gw = vec![0.0; c * w];
    for ch in 0..c {
        for i in 0..h {
            let gh = fw.gh[ch * h + i];
            for j in 0..w {
                let gw = fw.gw[ch * w + j];
                let up = upstream.at(ch, i, j);
                let xv = x.at(ch, i, j);
                *dx.at_mut(ch, i, j) = up * gh * gw;
                d_gh[ch * h + i] += up * xv * gw;
                d_gw[ch * w + j] += up * xv * gh;
            }
        }
    }
    // Through the sigmoids into the pre-activations of F_h / F_w.
    for (d, g) in d_gh.iter_mut().zip(&fw.gh) {
        *d *= g * (1.0 - g);
    }
    for (d, g) in d_gw.iter_mut().zip(&fw.gw) {
        *d *= g * (1.0 - g);
    }
    let f: Vec<f64> = fw.u.iter().map(|&v| swish(v)).collect();
    let mut grads = CAGrads {
        w1: vec![0.0; mid * c],
        b1: vec![0.0; mid],
        wh: vec![0.0; c * mid],
        bh: vec![0.0; c],
        ww: vec![0.0; c * mid],
        bw: vec![0.0; c],
    };
    let mut d_f = vec![0.0; mid * l];
    for ch in 0..c {
        for i in 0..h {
            let d = d_gh[ch * h + i];
            grads.bh[ch] += d;
            for m in 0..mid {
                grads.wh[ch * mid + m] += d * f[m * l + i];
                d_f[m * l + i] += params.wh[ch * mid + m] * d;
            }
        }
        for j in 0..w {
            let d = d_gw[ch * w + j];
            grads.bw[ch] += d;
            for m in 0..mid {
                grads.ww[ch * mid + m] += d * f[m * l + h + j];
                d_f[m * l + h + j] += params.ww[ch * mid + m] * d;
            }
        }
    }
    let d_u: Vec<f64> = d_f.iter().zip(&fw.u).map(|(d, &u)| d * swish_grad(u)).collect();
    let mut d_z = vec![0.0; c * l];
    for m in 0..mid {
        let du = &d_u[m * l..(m + 1) * l];
        grads.b1[m] = du.iter().sum();
        for ch in 0..c {
            let zc = &fw.z[ch * l..(ch + 1) * l];
            grads.w1[m * c + ch] = du.iter().zip(zc).map(|(a, b)| a * b).sum();
            let wt = params.w1[m * c + ch];
            for (dz, d) in d_z[ch * l..(ch + 1) * l].iter_mut().zip(du) {
                *dz += wt * d;
            }
        }
    }
    // Through the two mean poolings.
    for ch in 0..c {
        for i in 0..h {
            let dh = d_z[ch * l + i] / w as f64;
            for j in 0..w {
                *dx.at_mut(ch, i, j) += dh + d_z[ch * l + h + j] / h as f64;
            }
        }
    }
    Ok((dx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_params(rng: &mut impl Rng, c: usize, r: usize) -> CAParams {
        let mut p = CAParams::random(c, r, 1, rng).unwrap();
        for v in p.b1.iter_mut().chain(p.bh.iter_mut()).chain(p.bw.iter_mut()) {
            *v = rng.random_range(-0.5..0.5);
        }
        p
    }

    /// Scalar loops straight from the definition.
    fn naive(x: &FeatureMap, p: &CAParams) -> FeatureMap {
        let (c, h, w) = x.shape();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let mut zh = vec![vec![0.0; h]; c];
        let mut zw = vec![vec![0.0; w]; c];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    zh[ch][i] += x.at(ch, i, j) / w as f64;
                    zw[ch][j] += x.at(ch, i, j) / h as f64;
                }
            }
        }
        let strip = |ch: usize, k: usize| if k < h { zh[ch][k] } else { zw[ch][k - h] };
        let mut f = vec![vec![0.0; h + w]; p.mid];
        for m in 0..p.mid {
            for k in 0..h + w {
                let mut s = p.b1[m];
                for ch in 0..c {
                    s += p.w1[m * c + ch] * strip(ch, k);
                }
                f[m][k] = s * sig(s);
            }
        }
        FeatureMap::from_fn(c, h, w, |ch, i, j| {
            let mut ah = p.bh[ch];
            let mut aw = p.bw[ch];
            for m in 0..p.mid {
                ah += p.wh[ch * p.mid + m] * f[m][i];
                aw += p.ww[ch * p.mid + m] * f[m][h + j];
            }
            x.at(ch, i, j) * sig(ah) * sig(aw)
        })
    }

    #[test]
    fn zero_input_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_params(&mut rng, 4, 2);
        let y = ca_forward(&FeatureMap::zeros(4, 3, 5), &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_quarter_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = FeatureMap::from_fn(8, 3, 4, |_, _, _| rng.random_range(-3.0..3.0));
        let y = ca_forward(&x, &CAParams::zeros(8, 8, 8).unwrap()).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_eq!(*a, 0.25 * b);
        }
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x = FeatureMap::from_fn(4, 3, 5, |_, _, _| rng.random_range(-2.0..2.0));
            let p = random_params(&mut rng, 4, 2);
            let a = ca_forward(&x, &p).unwrap();
            let b = naive(&x, &p);
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn indivisible_channels_rejected() {
        assert!(CAParams::zeros(6, 4, 1).is_err());
        let p = CAParams::zeros(4, 2, 1).unwrap();
        let mut bad = p.clone();
        bad.reduction = 3;
        assert!(matches!(ca_forward(&FeatureMap::zeros(4, 2, 2), &bad), Err(Error::Shape(_))));
        assert!(ca_forward(&FeatureMap::zeros(8, 2, 2), &p).is_err());
    }

    #[test]
    fn multiplier_is_rank_one_and_attenuating() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = FeatureMap::from_fn(4, 4, 6, |_, _, _| {
            let v: f64 = rng.random_range(0.5..2.0);
            if rng.random_bool(0.5) { v } else { -v }
        });
        let p = random_params(&mut rng, 4, 2);
        let y = ca_forward(&x, &p).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(a.abs() <= b.abs());
        }
        for ch in 0..4 {
            let m = |i: usize, j: usize| y.at(ch, i, j) / x.at(ch, i, j);
            for i in 0..4 {
                for j in 0..6 {
                    let lhs = m(i, j) * m(0, 0);
                    let rhs = m(i, 0) * m(0, j);
                    assert!((lhs - rhs).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = FeatureMap::from_fn(4, 3, 3, |_, _, _| rng.random_range(-2.0..2.0));
        let p = random_params(&mut rng, 4, 2);
        let (dx, g) = ca_backward(&x, &p, &FeatureMap::zeros(4, 3, 3)).unwrap();
        assert!(dx.data().iter().all(|&v| v == 0.0));
        assert!([&g.w1, &g.b1, &g.wh, &g.bh, &g.ww, &g.bw].iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }
}
