//! Convolution primitives over channel-major planes, forward and backward.

use crate::attention::FeatureMap;

/// Output side of a 3×3, padding-1 convolution.
pub fn conv3_out(size: usize, stride: usize) -> usize {
    (size - 1) / stride + 1
}

/// 1×1 convolution: `out[o] = b[o] + Σ_i w[o, i] · x[i]`.
pub fn pointwise_forward(x: &FeatureMap, w: &[f64], b: &[f64]) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let cout = b.len();
    debug_assert_eq!(w.len(), cout * cin);
    let m = h * wd;
    let mut out = FeatureMap::zeros(cout, h, wd);
    let src = x.data();
    for (o, dst) in out.data_mut().chunks_exact_mut(m).enumerate() {
        dst.fill(b[o]);
        for i in 0..cin {
            let wt = w[o * cin + i];
            for (d, s) in dst.iter_mut().zip(&src[i * m..(i + 1) * m]) {
                *d += wt * s;
            }
        }
    }
    out
}

/// Accumulates weight/bias gradients into `gw`/`gb`, returns the input gradient.
pub fn pointwise_backward(
    x: &FeatureMap,
    w: &[f64],
    upstream: &FeatureMap,
    gw: &mut [f64],
    gb: &mut [f64],
) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let cout = upstream.channels();
    let m = h * wd;
    let mut dx = FeatureMap::zeros(cin, h, wd);
    let src = x.data();
    for o in 0..cout {
        let go = upstream.channel(o);
        gb[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let xi = &src[i * m..(i + 1) * m];
            gw[o * cin + i] += go.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>();
            let wt = w[o * cin + i];
            for (d, g) in dx.data_mut()[i * m..(i + 1) * m].iter_mut().zip(go) {
                *d += wt * g;
            }
        }
    }
    dx
}

/// Visits every (output position, kernel tap, input position) of a 3×3 pad-1 window.
#[inline]
fn for_taps(h: usize, w: usize, stride: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (ho, wo) = (conv3_out(h, stride), conv3_out(w, stride));
    for oi in 0..ho {
        for ki in 0..3 {
            let ii = (oi * stride + ki) as isize - 1;
            if ii < 0 || ii as usize >= h {
                continue;
            }
            let ii = ii as usize;
            for oj in 0..wo {
                for kj in 0..3 {
                    let jj = (oj * stride + kj) as isize - 1;
                    if jj < 0 || jj as usize >= w {
                        continue;
                    }
                    f(oi * wo + oj, ki * 3 + kj, ii * w + jj as usize);
                }
            }
        }
    }
}

/// Depthwise 3×3 convolution with padding 1; `w` is `C × 9`.
pub fn depthwise_forward(x: &FeatureMap, w: &[f64], b: &[f64], stride: usize) -> FeatureMap {
    let (c, h, wd) = x.shape();
    let (ho, wo) = (conv3_out(h, stride), conv3_out(wd, stride));
    let mut out = FeatureMap::zeros(c, ho, wo);
    let mo = ho * wo;
    for ch in 0..c {
        let src = x.channel(ch);
        let k = &w[ch * 9..ch * 9 + 9];
        let dst = &mut out.data_mut()[ch * mo..(ch + 1) * mo];
        dst.fill(b[ch]);
        for_taps(h, wd, stride, |o, t, i| dst[o] += k[t] * src[i]);
    }
    out
}

pub fn depthwise_backward(
    x: &FeatureMap,
    w: &[f64],
    stride: usize,
    upstream: &FeatureMap,
    gw: &mut [f64],
    gb: &mut [f64],
) -> FeatureMap {
    let (c, h, wd) = x.shape();
    let m = h * wd;
    let mut dx = FeatureMap::zeros(c, h, wd);
    for ch in 0..c {
        let src = x.channel(ch);
        let go = upstream.channel(ch);
        gb[ch] += go.iter().sum::<f64>();
        let k = &w[ch * 9..ch * 9 + 9];
        let gk = &mut gw[ch * 9..ch * 9 + 9];
        let dst = &mut dx.data_mut()[ch * m..(ch + 1) * m];
        for_taps(h, wd, stride, |o, t, i| {
            gk[t] += go[o] * src[i];
            dst[i] += k[t] * go[o];
        });
    }
    dx
}

/// Dense 3×3 convolution with padding 1; `w` is `Cout × Cin × 9`.
pub fn conv3_forward(x: &FeatureMap, w: &[f64], b: &[f64], stride: usize) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let cout = b.len();
    let (ho, wo) = (conv3_out(h, stride), conv3_out(wd, stride));
    let mo = ho * wo;
    let mut out = FeatureMap::zeros(cout, ho, wo);
    for o in 0..cout {
        let dst = &mut out.data_mut()[o * mo..(o + 1) * mo];
        dst.fill(b[o]);
        for i in 0..cin {
            let src = x.channel(i);
            let k = &w[(o * cin + i) * 9..(o * cin + i) * 9 + 9];
            for_taps(h, wd, stride, |oo, t, ii| dst[oo] += k[t] * src[ii]);
        }
    }
    out
}

pub fn conv3_backward(
    x: &FeatureMap,
    w: &[f64],
    stride: usize,
    upstream: &FeatureMap,
    gw: &mut [f64],
    gb: &mut [f64],
) -> FeatureMap {
    let (cin, h, wd) = x.shape();
    let cout = upstream.channels();
    let m = h * wd;
    let mut dx = FeatureMap::zeros(cin, h, wd);
    for o in 0..cout {
        let go = upstream.channel(o);
        gb[o] += go.iter().sum::<f64>();
        for i in 0..cin {
            let src = x.channel(i);
            let base = (o * cin + i) * 9;
            let k = &w[base..base + 9];
            let gk = &mut gw[base..base + 9];
            let dst = &mut dx.data_mut()[i * m..(i + 1) * m];
            for_taps(h, wd, stride, |oo, t, ii| {
                gk[t] += go[oo] * src[ii];
                dst[ii] += k[t] * go[oo];
            });
        }
    }
    dx
}
