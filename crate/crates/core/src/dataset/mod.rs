//! Self-labelled synthetic crops.
//!
//! Every sample is a pure function of `(SamplerConfig, basis, index)`:
//! parameters come from ChaCha stream `2·index`, pixels from stream
//! `2·index + 1`, so generation parallelises over indices without changing
//! a single byte.

mod io;
mod render;

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::{kv, parse_value, unknown_key, KeyValueConfig};
use crate::hash::Fingerprint;
use crate::morphable_model::{compose_pose, decompose_pose, project, Landmarks2D};
use crate::{Error, MorphableBasis, ParamVector, Result, NUM_EXP, NUM_ID};

pub use io::{dataset_bytes, read_dataset, write_dataset};
pub use render::{apply_lighting, render_sample, render_sample_with};

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub seed: u64,
    pub count: usize,
    /// Crop side `S` in pixels.
    pub size: usize,
    /// Symmetric yaw range in degrees, `[-yaw_max, yaw_max]`.
    pub yaw_max_deg: f64,
    pub pitch_max_deg: f64,
    pub roll_max_deg: f64,
    /// Scale `f` is drawn from `[scale_min, scale_max] · S` pixels per model unit.
    pub scale_min: f64,
    pub scale_max: f64,
    /// Translation offset from the crop centre, as a fraction of `S`.
    pub shift: f64,
    /// Multiplier on the basis prior scales when drawing α.
    pub alpha_sigma: f64,
    pub noise_std: f64,
    pub occlusion_prob: f64,
    pub lighting_prob: f64,
    pub lighting_min: f64,
    pub lighting_max: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            seed: 1,
            count: 2000,
            size: 64,
            yaw_max_deg: 89.0,
            pitch_max_deg: 20.0,
            roll_max_deg: 20.0,
            scale_min: 0.26,
            scale_max: 0.34,
            shift: 0.05,
            alpha_sigma: 1.0,
            noise_std: 0.02,
            occlusion_prob: 0.2,
            lighting_prob: 0.5,
            lighting_min: 0.5,
            lighting_max: 1.0,
        }
    }
}

impl KeyValueConfig for SamplerConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            kv("seed", self.seed),
            kv("count", self.count),
            kv("size", self.size),
            kv("yaw_max_deg", self.yaw_max_deg),
            kv("pitch_max_deg", self.pitch_max_deg),
            kv("roll_max_deg", self.roll_max_deg),
            kv("scale_min", self.scale_min),
            kv("scale_max", self.scale_max),
            kv("shift", self.shift),
            kv("alpha_sigma", self.alpha_sigma),
            kv("noise_std", self.noise_std),
            kv("occlusion_prob", self.occlusion_prob),
            kv("lighting_prob", self.lighting_prob),
            kv("lighting_min", self.lighting_min),
            kv("lighting_max", self.lighting_max),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "count" => self.count = parse_value(key, value)?,
            "size" => self.size = parse_value(key, value)?,
            "yaw_max_deg" => self.yaw_max_deg = parse_value(key, value)?,
            "pitch_max_deg" => self.pitch_max_deg = parse_value(key, value)?,
            "roll_max_deg" => self.roll_max_deg = parse_value(key, value)?,
            "scale_min" => self.scale_min = parse_value(key, value)?,
            "scale_max" => self.scale_max = parse_value(key, value)?,
            "shift" => self.shift = parse_value(key, value)?,
            "alpha_sigma" => self.alpha_sigma = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "occlusion_prob" => self.occlusion_prob = parse_value(key, value)?,
            "lighting_prob" => self.lighting_prob = parse_value(key, value)?,
            "lighting_min" => self.lighting_min = parse_value(key, value)?,
            "lighting_max" => self.lighting_max = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.size < 8 {
            return bad("crop size must be at least 8 pixels");
        }
        if !(self.yaw_max_deg > 0.0 && self.yaw_max_deg < 90.0) {
            return bad("yaw range must lie inside (0, 90) degrees");
        }
        if !(self.pitch_max_deg >= 0.0 && self.pitch_max_deg < 90.0)
            || !(self.roll_max_deg >= 0.0 && self.roll_max_deg <= 180.0)
        {
            return bad("pitch range must lie in [0, 90) and roll in [0, 180] degrees");
        }
        if !(self.scale_min > 0.0 && self.scale_min < self.scale_max) {
            return bad("scale range must satisfy 0 < scale_min < scale_max");
        }
        if !(self.shift >= 0.0 && self.alpha_sigma >= 0.0 && self.noise_std >= 0.0) {
            return bad("shift, alpha_sigma and noise_std must be non-negative");
        }
        for p in [self.occlusion_prob, self.lighting_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(self.lighting_min > 0.0 && self.lighting_min <= self.lighting_max) {
            return bad("lighting range must satisfy 0 < lighting_min <= lighting_max");
        }
        Ok(())
    }
}

impl SamplerConfig {
    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// One labelled crop.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// `3 × S × S`, channel-major, values in `[0, 1]`.
    pub image: Vec<f32>,
    pub p_g: ParamVector,
    pub landmarks_g: Landmarks2D,
    /// `|yaw|` of `p_g` in degrees.
    pub yaw_deg: f64,
    pub occluded: bool,
    /// Global intensity factor applied to the image (1 when not applied).
    pub lighting: f64,
}

impl SampleRecord {
    /// Rounds every pixel to the nearest multiple of 1/255, as stored on disk.
    pub fn quantize(&mut self) {
        for v in &mut self.image {
            *v = quantize_pixel(*v) as f32 / 255.0;
        }
    }
}

pub(crate) fn quantize_pixel(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Ground-truth parameters for sample `index`.
///
/// Redraws (up to 100 times) until every landmark lies inside `[0, S)²`.
pub fn sample_params(
    cfg: &SamplerConfig,
    basis: &MorphableBasis,
    index: u64,
) -> Result<ParamVector> {
    cfg.validate()?;
    let mut rng = cfg.rng(2 * index);
    let s = cfg.size as f64;
    let deg = PI / 180.0;
    for _ in 0..100 {
        let yaw = rng.random_range(-cfg.yaw_max_deg..=cfg.yaw_max_deg) * deg;
        let pitch = rng.random_range(-cfg.pitch_max_deg..=cfg.pitch_max_deg) * deg;
        let roll = rng.random_range(-cfg.roll_max_deg..=cfg.roll_max_deg) * deg;
        let f = rng.random_range(cfg.scale_min..=cfg.scale_max) * s;
        let tx = s / 2.0 + rng.random_range(-cfg.shift..=cfg.shift) * s;
        let ty = s / 2.0 + rng.random_range(-cfg.shift..=cfg.shift) * s;
        let mut id = [0.0; NUM_ID];
        for (a, sc) in id.iter_mut().zip(basis.id_scale()) {
            *a = cfg.alpha_sigma * sc * rng.sample::<f64, _>(StandardNormal);
        }
        let mut exp = [0.0; NUM_EXP];
        for (a, sc) in exp.iter_mut().zip(basis.exp_scale()) {
            *a = cfg.alpha_sigma * sc * rng.sample::<f64, _>(StandardNormal);
        }
        let pose = compose_pose(f, yaw, pitch, roll, [tx, ty, 0.0])?;
        let p = ParamVector::from_parts(&pose, &id, &exp)?;
        let lm = project(basis, &p)?;
        let inside = lm
            .points()
            .iter()
            .all(|q| (0.0..s).contains(&q[0]) && (0.0..s).contains(&q[1]));
        if inside {
            return Ok(p);
        }
    }
    Err(Error::Config(format!(
        "sample {index}: landmarks left the {s}×{s} crop in 100 consecutive draws; \
         reduce the scale or shift ranges"
    )))
}

/// Absolute yaw of a pose in degrees.
pub fn yaw_degrees(p: &ParamVector) -> Result<f64> {
    Ok(decompose_pose(p.pose())?.yaw.abs().to_degrees())
}

/// Samples and renders record `index`.
pub fn generate_sample(
    cfg: &SamplerConfig,
    basis: &MorphableBasis,
    index: u64,
) -> Result<SampleRecord> {
    let p = sample_params(cfg, basis, index)?;
    render_sample(&p, basis, cfg, index)
}

/// A dataset plus the provenance recorded in its file header.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub basis_fingerprint: Fingerprint,
    pub config_hash: Fingerprint,
    /// Sampler configuration text the records were generated from.
    pub config_text: String,
    pub size: usize,
    pub records: Vec<SampleRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Fails with a hash mismatch unless the dataset was generated from `basis`.
    pub fn check_basis(&self, basis: &MorphableBasis) -> Result<()> {
        let fp = basis.fingerprint();
        if fp != self.basis_fingerprint {
            return Err(Error::HashMismatch {
                what: "dataset basis fingerprint".into(),
                expected: fp.to_string(),
                found: self.basis_fingerprint.to_string(),
            });
        }
        Ok(())
    }
}

/// Generates `cfg.count` records on `workers` threads (index order preserved).
pub fn generate_dataset(
    cfg: &SamplerConfig,
    basis: &MorphableBasis,
    workers: usize,
) -> Result<Dataset> {
    cfg.validate()?;
    let gen = || -> Result<Vec<SampleRecord>> {
        (0..cfg.count as u64)
            .into_par_iter()
            .map(|i| generate_sample(cfg, basis, i))
            .collect()
    };
    let records = if workers <= 1 {
        (0..cfg.count as u64)
            .map(|i| generate_sample(cfg, basis, i))
            .collect::<Result<Vec<_>>>()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(gen)?
    };
    Ok(Dataset {
        basis_fingerprint: basis.fingerprint(),
        config_hash: cfg.config_hash(),
        config_text: cfg.render(),
        size: cfg.size,
        records,
    })
}

#[cfg(test)]
mod tests;
