//! Gaussian-splat renderer with occlusion and lighting augmentation.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{yaw_degrees, SampleRecord, SamplerConfig};
use crate::morphable_model::{project_point, synthesize_shape};
use crate::{MorphableBasis, ParamVector, Result};

const SPLAT_SIGMA: f64 = 1.0;
const SPLAT_RADIUS: f64 = 3.0;

/// Renders `p_g` into a labelled sample.
///
/// Each vertex is splatted with a colour taken from its normalised
/// mean-shape coordinates, dimmed by its depth after rotation. The image is
/// max-normalised, noised and clamped; then the augmentations draw from the
/// same per-index stream in a fixed order, so toggling one never changes the
/// other or the labels.
pub fn render_sample(
    p_g: &ParamVector,
    basis: &MorphableBasis,
    cfg: &SamplerConfig,
    index: u64,
) -> Result<SampleRecord> {
    render_sample_with(p_g, basis, cfg, index, None, None)
}

/// As [`render_sample`], optionally forcing the occlusion and lighting coins.
pub fn render_sample_with(
    p_g: &ParamVector,
    basis: &MorphableBasis,
    cfg: &SamplerConfig,
    index: u64,
    occlude: Option<bool>,
    relight: Option<bool>,
) -> Result<SampleRecord> {
    let s = cfg.size;
    let mut rng = cfg.rng(2 * index + 1);
    let landmarks_g = crate::morphable_model::project(basis, p_g)?;
    let yaw_deg = yaw_degrees(p_g)?;

    let shape = synthesize_shape(basis, p_g.alpha_id(), p_g.alpha_exp())?;
    let pose = p_g.pose();
    let colours = vertex_colours(basis);
    let f = (pose[8] * pose[8] + pose[9] * pose[9] + pose[10] * pose[10]).sqrt();
    let depth: Vec<f64> = shape
        .vertices
        .iter()
        .map(|v| (pose[8] * v[0] + pose[9] * v[1] + pose[10] * v[2]) / f)
        .collect();
    let (dmin, dmax) = depth
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let span = (dmax - dmin).max(1e-12);

    let plane = s * s;
    let mut img = vec![0.0f64; 3 * plane];
    for (vi, v) in shape.vertices.iter().enumerate() {
        let [x, y] = project_point(pose, *v);
        let shade = 0.25 + 0.75 * (depth[vi] - dmin) / span;
        let r0 = ((y - SPLAT_RADIUS).floor().max(0.0)) as usize;
        let r1 = ((y + SPLAT_RADIUS).ceil().min(s as f64 - 1.0)).max(-1.0);
        let c0 = ((x - SPLAT_RADIUS).floor().max(0.0)) as usize;
        let c1 = ((x + SPLAT_RADIUS).ceil().min(s as f64 - 1.0)).max(-1.0);
        if r1 < 0.0 || c1 < 0.0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let d2 = (r as f64 - y).powi(2) + (c as f64 - x).powi(2);
                let w = shade * (-d2 / (2.0 * SPLAT_SIGMA * SPLAT_SIGMA)).exp();
                for ch in 0..3 {
                    img[ch * plane + r * s + c] += w * colours[vi][ch];
                }
            }
        }
    }
    let peak = img.iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        img.iter_mut().for_each(|v| *v /= peak);
    }
    for v in &mut img {
        let n: f64 = rng.sample(StandardNormal);
        *v = (*v + cfg.noise_std * n).clamp(0.0, 1.0);
    }

    // Occlusion draws.
    let occ_coin = rng.random::<f64>() < cfg.occlusion_prob;
    let frac = rng.random_range(0.1..=0.3);
    let aspect = rng.random_range(0.5f64..=2.0);
    let fill: [f64; 3] = std::array::from_fn(|_| rng.random::<f64>());
    let ux = rng.random::<f64>();
    let uy = rng.random::<f64>();
    // Lighting draws.
    let light_coin = rng.random::<f64>() < cfg.lighting_prob;
    let scale = rng.random_range(cfg.lighting_min..=cfg.lighting_max);

    let occluded = occlude.unwrap_or(occ_coin);
    if occluded {
        let area = frac * plane as f64;
        let w = ((area * aspect).sqrt().round() as usize).clamp(1, s);
        let h = ((area / w as f64).round() as usize).clamp(1, s);
        let x0 = (ux * (s - w + 1) as f64) as usize;
        let y0 = (uy * (s - h + 1) as f64) as usize;
        for (ch, &fv) in fill.iter().enumerate() {
            for r in y0..(y0 + h).min(s) {
                for c in x0..(x0 + w).min(s) {
                    img[ch * plane + r * s + c] = fv;
                }
            }
        }
    }
    let mut image: Vec<f32> = img.iter().map(|&v| v as f32).collect();
    let lighting = if relight.unwrap_or(light_coin) {
        apply_lighting(&mut image, scale);
        scale
    } else {
        1.0
    };
    Ok(SampleRecord {
        image,
        p_g: *p_g,
        landmarks_g,
        yaw_deg,
        occluded,
        lighting,
    })
}

/// Multiplies every pixel by `scale`.
pub fn apply_lighting(image: &mut [f32], scale: f64) {
    for v in image {
        *v = (*v as f64 * scale) as f32;
    }
}

/// Mean-shape coordinates rescaled to `[0, 1]` per axis.
fn vertex_colours(basis: &MorphableBasis) -> Vec<[f64; 3]> {
    let mean = basis.mean_shape();
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in mean.chunks_exact(3) {
        for d in 0..3 {
            lo[d] = lo[d].min(v[d]);
            hi[d] = hi[d].max(v[d]);
        }
    }
    mean.chunks_exact(3)
        .map(|v| std::array::from_fn(|d| (v[d] - lo[d]) / (hi[d] - lo[d]).max(1e-12)))
        .collect()
}
