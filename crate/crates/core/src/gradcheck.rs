//! Central-difference verification of every analytic gradient.
//!
//! Each component is checked over `seeds` random instances; the error of an
//! instance is `‖fd − analytic‖∞ / max(‖fd‖∞, ‖analytic‖∞)`. The worst
//! instance per component is compared against its tolerance.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::attention::{
    ca_backward, ca_forward, sge_backward, sge_forward, swish, swish_grad, CAParams, FeatureMap,
    SGEParams,
};
use crate::hash::Fingerprint;
use crate::losses::{
    merged_loss_with_weights, pdc, vdc, wing, wing_landmarks, wpdc_weights, wpdc_with_weights,
    WingConfig,
};
use crate::morphable_model::{compose_pose, generate_synthetic_basis};
use crate::regressor::{
    parse_layers, training_loss, Backbone, BackboneConfig, LossKind, ParamWhitening,
};
use crate::{MorphableBasis, ParamVector, Result, NUM_LANDMARKS, PARAM_DIM};

/// Losses evaluated without passing through projection or attention.
pub const TOL_DIRECT: f64 = 1e-5;
/// Through projection or an attention block.
pub const TOL_COMPOSED: f64 = 1e-4;
/// Through the whole network.
pub const TOL_END_TO_END: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random instances per component.
    pub seeds: usize,
    /// Test hook: negate the analytic Wing gradient before comparing.
    pub flip_wing_sign: bool,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            seed: 0,
            seeds: 50,
            flip_wing_sign: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub worst: f64,
    pub instances: usize,
}

impl ComponentResult {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub results: Vec<ComponentResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.results.iter().all(ComponentResult::passed)
    }

    pub fn failures(&self) -> Vec<&'static str> {
        self.results
            .iter()
            .filter(|r| !r.passed())
            .map(|r| r.name)
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<16} {:>10} {:>12} {:>10}  verdict\n",
            "component", "instances", "worst", "tolerance"
        );
        for r in &self.results {
            let _ = writeln!(
                out,
                "{:<16} {:>10} {:>12.3e} {:>10.0e}  {}",
                r.name,
                r.instances,
                r.worst,
                r.tolerance,
                if r.passed() { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

/// `‖a − b‖∞ / max(‖a‖∞, ‖b‖∞)`, or the absolute gap when both are tiny.
pub fn relative_error(fd: &[f64], analytic: &[f64]) -> f64 {
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gap = fd
        .iter()
        .zip(analytic)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = inf(fd).max(inf(analytic));
    if scale < 1e-12 {
        gap
    } else {
        gap / scale
    }
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn rng_for(opts: &GradcheckOptions, component: u64, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(instance as u64));
    rng.set_stream(component);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random pose and coefficients with scales typical of the synthetic data.
pub fn random_params(rng: &mut ChaCha8Rng, basis: &MorphableBasis) -> ParamVector {
    let pose = compose_pose(
        rng.random_range(0.5..2.0),
        rng.random_range(-1.2..1.2),
        rng.random_range(-0.5..0.5),
        rng.random_range(-0.5..0.5),
        [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 0.0],
    )
    .expect("valid pose");
    let id: Vec<f64> = basis.id_scale().iter().map(|s| 0.5 * s * normal(rng)).collect();
    let exp: Vec<f64> = basis.exp_scale().iter().map(|s| 0.5 * s * normal(rng)).collect();
    ParamVector::from_parts(&pose, &id, &exp).expect("62 entries")
}

fn as_params(x: &[f64]) -> ParamVector {
    ParamVector::from_slice(x).expect("62 entries")
}

/// Tiny backbone used for the end-to-end check.
pub fn tiny_backbone_config(seed: u64) -> BackboneConfig {
    BackboneConfig {
        input_size: 16,
        stem_channels: 4,
        layers: parse_layers("4:1:1,8:2:1").expect("static layer plan"),
        expansion: 2,
        sge_groups: 2,
        ca_reduction: 4,
        ca_min_mid: 2,
        seed,
    }
}

struct Runner<'a> {
    opts: &'a GradcheckOptions,
    basis: MorphableBasis,
    wing: WingConfig,
    results: Vec<ComponentResult>,
}

impl Runner<'_> {
    fn component(
        &mut self,
        name: &'static str,
        tolerance: f64,
        mut instance: impl FnMut(&Self, &mut ChaCha8Rng) -> Result<f64>,
    ) -> Result<()> {
        let stream = self.results.len() as u64 + 1;
        let mut worst: f64 = 0.0;
        for i in 0..self.opts.seeds {
            let mut rng = rng_for(self.opts, stream, i);
            let e = instance(self, &mut rng)?;
            worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
        }
        log::debug!("gradcheck {name}: worst {worst:.3e}");
        self.results.push(ComponentResult {
            name,
            tolerance,
            worst,
            instances: self.opts.seeds,
        });
        Ok(())
    }

    fn wing_sign(&self) -> f64 {
        if self.opts.flip_wing_sign {
            -1.0
        } else {
            1.0
        }
    }
}

/// Runs every component check.
pub fn run(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut r = Runner {
        opts,
        basis: generate_synthetic_basis(opts.seed, 100)?,
        wing: WingConfig::default(),
        results: Vec::new(),
    };
    let h = 1e-6;

    r.component("pdc", TOL_DIRECT, |s, rng| {
        let (p, g) = (random_params(rng, &s.basis), random_params(rng, &s.basis));
        let fd = central_differences(p.as_slice(), h, |x| pdc(&as_params(x), &g).value);
        Ok(relative_error(&fd, &pdc(&p, &g).grad))
    })?;

    r.component("wpdc", TOL_DIRECT, |s, rng| {
        let (p, g) = (random_params(rng, &s.basis), random_params(rng, &s.basis));
        let w = wpdc_weights(&p, &g, &s.basis)?;
        let fd = central_differences(p.as_slice(), h, |x| wpdc_with_weights(&as_params(x), &g, &w).value);
        Ok(relative_error(&fd, &wpdc_with_weights(&p, &g, &w).grad))
    })?;

    r.component("wing", TOL_DIRECT, |s, rng| {
        let omega = s.wing.omega();
        // Residuals kept away from the knee and from zero, where the loss has kinks.
        let res: Vec<f64> = (0..2 * NUM_LANDMARKS)
            .map(|_| loop {
                let x: f64 = rng.random_range(-3.0 * omega..3.0 * omega);
                if (x.abs() - omega).abs() > 1e-3 && x.abs() > 1e-3 {
                    break x;
                }
            })
            .collect();
        let pairs = |v: &[f64]| v.chunks_exact(2).map(|c| [c[0], c[1]]).collect::<Vec<_>>();
        let fd = central_differences(&res, h, |x| wing(&pairs(x), &s.wing).value);
        let analytic: Vec<f64> = wing(&pairs(&res), &s.wing)
            .grad
            .iter()
            .map(|g| s.wing_sign() * g)
            .collect();
        Ok(relative_error(&fd, &analytic))
    })?;

    r.component("wing_landmarks", TOL_COMPOSED, |s, rng| {
        let (p, g) = (random_params(rng, &s.basis), random_params(rng, &s.basis));
        let fd = central_differences(p.as_slice(), h, |x| {
            wing_landmarks(&as_params(x), &g, &s.basis, &s.wing).map_or(f64::NAN, |r| r.value)
        });
        let analytic: Vec<f64> = wing_landmarks(&p, &g, &s.basis, &s.wing)?
            .grad
            .iter()
            .map(|v| s.wing_sign() * v)
            .collect();
        Ok(relative_error(&fd, &analytic))
    })?;

    r.component("vdc", TOL_COMPOSED, |s, rng| {
        let (p, g) = (random_params(rng, &s.basis), random_params(rng, &s.basis));
        let fd = central_differences(p.as_slice(), h, |x| {
            vdc(&as_params(x), &g, &s.basis).map_or(f64::NAN, |r| r.value)
        });
        Ok(relative_error(&fd, &vdc(&p, &g, &s.basis)?.grad))
    })?;

    r.component("merged", TOL_COMPOSED, |s, rng| {
        let (p, g) = (random_params(rng, &s.basis), random_params(rng, &s.basis));
        let w = wpdc_weights(&p, &g, &s.basis)?;
        let fd = central_differences(p.as_slice(), h, |x| {
            merged_loss_with_weights(&as_params(x), &g, &s.basis, &s.wing, &w)
                .map_or(f64::NAN, |r| r.value)
        });
        Ok(relative_error(&fd, &merged_loss_with_weights(&p, &g, &s.basis, &s.wing, &w)?.grad))
    })?;

    r.component("swish", TOL_DIRECT, |_, rng| {
        let xs: Vec<f64> = (0..32).map(|_| rng.random_range(-8.0..8.0)).collect();
        let fd: Vec<f64> = xs
            .iter()
            .map(|&x| (swish(x + h) - swish(x - h)) / (2.0 * h))
            .collect();
        let analytic: Vec<f64> = xs.iter().map(|&x| swish_grad(x)).collect();
        Ok(relative_error(&fd, &analytic))
    })?;

    r.component("sge", TOL_COMPOSED, |_, rng| {
        let (c, hh, ww, groups) = (8, 4, 4, 2);
        let x = FeatureMap::from_fn(c, hh, ww, |_, _, _| normal(rng));
        let up = FeatureMap::from_fn(c, hh, ww, |_, _, _| normal(rng));
        let mut params = SGEParams::new(groups);
        for v in params.gamma.iter_mut().chain(params.beta.iter_mut()) {
            *v = normal(rng);
        }
        let dot = |y: &FeatureMap| y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>();
        let (dx, dp) = sge_backward(&x, &params, &up)?;
        let fd_x = central_differences(x.data(), h, |v| {
            let xm = FeatureMap::new(c, hh, ww, v.to_vec()).expect("same shape");
            sge_forward(&xm, &params).map_or(f64::NAN, |y| dot(&y))
        });
        let theta: Vec<f64> = params.gamma.iter().chain(&params.beta).copied().collect();
        let fd_p = central_differences(&theta, h, |t| {
            let mut q = params.clone();
            q.gamma.copy_from_slice(&t[..groups]);
            q.beta.copy_from_slice(&t[groups..]);
            sge_forward(&x, &q).map_or(f64::NAN, |y| dot(&y))
        });
        let an_p: Vec<f64> = dp.gamma.iter().chain(&dp.beta).copied().collect();
        Ok(relative_error(&fd_x, dx.data()).max(relative_error(&fd_p, &an_p)))
    })?;

    r.component("ca", TOL_COMPOSED, |_, rng| {
        let (c, hh, ww) = (4, 3, 5);
        let x = FeatureMap::from_fn(c, hh, ww, |_, _, _| normal(rng));
        let up = FeatureMap::from_fn(c, hh, ww, |_, _, _| normal(rng));
        let mut params = CAParams::random(c, 2, 1, rng)?;
        for v in params
            .b1
            .iter_mut()
            .chain(params.bh.iter_mut())
            .chain(params.bw.iter_mut())
        {
            *v = 0.5 * normal(rng);
        }
        let dot = |y: &FeatureMap| y.data().iter().zip(up.data()).map(|(a, b)| a * b).sum::<f64>();
        let (dx, dp) = ca_backward(&x, &params, &up)?;
        let fd_x = central_differences(x.data(), h, |v| {
            let xm = FeatureMap::new(c, hh, ww, v.to_vec()).expect("same shape");
            ca_forward(&xm, &params).map_or(f64::NAN, |y| dot(&y))
        });
        let flat = |p: &CAParams| -> Vec<f64> {
            [&p.w1, &p.b1, &p.wh, &p.bh, &p.ww, &p.bw]
                .into_iter()
                .flatten()
                .copied()
                .collect()
        };
        let unflat = |t: &[f64]| {
            let mut q = params.clone();
            let mut at = 0;
            for dst in [&mut q.w1, &mut q.b1, &mut q.wh, &mut q.bh, &mut q.ww, &mut q.bw] {
                let n = dst.len();
                dst.copy_from_slice(&t[at..at + n]);
                at += n;
            }
            q
        };
        let fd_p = central_differences(&flat(&params), h, |t| {
            ca_forward(&x, &unflat(t)).map_or(f64::NAN, |y| dot(&y))
        });
        let an_p: Vec<f64> = [&dp.w1, &dp.b1, &dp.wh, &dp.bh, &dp.ww, &dp.bw]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        Ok(relative_error(&fd_x, dx.data()).max(relative_error(&fd_p, &an_p)))
    })?;

    r.component("network", TOL_END_TO_END, |s, rng| {
        let mut net = Backbone::new(tiny_backbone_config(rng.random()))?;
        for w in net.weights_mut() {
            *w += 0.2 * normal(rng);
        }
        let img = FeatureMap::from_fn(3, 16, 16, |_, _, _| rng.random_range(0.0..1.0));
        let g = random_params(rng, &s.basis);
        let mut whitening = ParamWhitening::identity(Fingerprint(0));
        let centre = random_params(rng, &s.basis);
        for i in 0..PARAM_DIM {
            whitening.mean[i] = centre.0[i];
            whitening.std[i] = rng.random_range(0.2..1.5);
        }
        let (out, tape) = net.forward_tape(&img)?;
        let frozen = wpdc_weights(&whitening.dewhiten(&out), &g, &s.basis)?;
        let w0 = net.weights().to_vec();
        let mut worst: f64 = 0.0;
        for kind in LossKind::ALL {
            let report = training_loss(kind, &out, &g, &whitening, &s.basis, &s.wing, Some(&frozen))?;
            let d_out: [f64; PARAM_DIM] = report.grad.as_slice().try_into().expect("62");
            let mut analytic = vec![0.0; w0.len()];
            net.backward(&tape, &d_out, &mut analytic)?;
            let mut probe = net.clone();
            let fd = central_differences(&w0, 1e-5, |w| {
                probe.weights_mut().copy_from_slice(w);
                probe
                    .forward(&img)
                    .and_then(|o| training_loss(kind, &o, &g, &whitening, &s.basis, &s.wing, Some(&frozen)))
                    .map_or(f64::NAN, |r| r.value)
            });
            worst = worst.max(relative_error(&fd, &analytic));
        }
        Ok(worst)
    })?;

    Ok(GradcheckReport { results: r.results })
}
