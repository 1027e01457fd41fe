//! SGD training of the backbone on a synthetic dataset.

use std::fmt::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Backbone, BackboneConfig, Checkpoint, ParamWhitening, PlateauScheduler};
use crate::attention::FeatureMap;
use crate::config::{kv, parse_value, unknown_key, KeyValueConfig};
use crate::dataset::{Dataset, SampleRecord};
use crate::evaluation::nme;
use crate::hash::Fingerprint;
use crate::losses::{
    combine_merged, pdc, vdc, wing_landmarks, wpdc_weights, wpdc_with_weights, LossReport,
    WPDCWeights, WingConfig,
};
use crate::morphable_model::project;
use crate::{Error, MorphableBasis, ParamVector, Result, PARAM_DIM};

/// Training images used to calibrate the initial weight scales.
pub const CALIBRATION_SAMPLES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Pdc,
    Vdc,
    Wpdc,
    Wing,
    Merged,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [
        LossKind::Pdc,
        LossKind::Vdc,
        LossKind::Wpdc,
        LossKind::Wing,
        LossKind::Merged,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Pdc => "pdc",
            LossKind::Vdc => "vdc",
            LossKind::Wpdc => "wpdc",
            LossKind::Wing => "wing",
            LossKind::Merged => "merged",
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss {s:?} (pdc, vdc, wpdc, wing, merged)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub decay: f64,
    pub patience: usize,
    /// Minimum NME drop that counts as an improvement.
    pub threshold: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub loss: LossKind,
    pub wing_omega: f64,
    pub wing_epsilon: f64,
    /// Share of the dataset held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 0.02,
            decay: 0.6,
            patience: 4,
            threshold: 1e-4,
            momentum: 0.9,
            batch_size: 32,
            epochs: 30,
            loss: LossKind::Merged,
            wing_omega: 10.0,
            wing_epsilon: 2.0,
            val_fraction: 0.1,
            seed: 1,
        }
    }
}

impl KeyValueConfig for TrainConfig {
    fn entries(&self) -> Vec<(String, String)> {
        vec![
            kv("lr0", self.lr0),
            kv("decay", self.decay),
            kv("patience", self.patience),
            kv("threshold", self.threshold),
            kv("momentum", self.momentum),
            kv("batch_size", self.batch_size),
            kv("epochs", self.epochs),
            kv("loss", self.loss.name()),
            kv("wing_omega", self.wing_omega),
            kv("wing_epsilon", self.wing_epsilon),
            kv("val_fraction", self.val_fraction),
            kv("seed", self.seed),
        ]
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "lr0" => self.lr0 = parse_value(key, value)?,
            "decay" => self.decay = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "threshold" => self.threshold = parse_value(key, value)?,
            "momentum" => self.momentum = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "loss" => self.loss = value.parse()?,
            "wing_omega" => self.wing_omega = parse_value(key, value)?,
            "wing_epsilon" => self.wing_epsilon = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        PlateauScheduler::new(self.lr0, self.decay, self.patience, self.threshold)?;
        WingConfig::new(self.wing_omega, self.wing_epsilon)?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

impl TrainConfig {
    pub fn wing(&self) -> Result<WingConfig> {
        WingConfig::new(self.wing_omega, self.wing_epsilon)
    }

    pub fn scheduler(&self) -> Result<PlateauScheduler> {
        PlateauScheduler::new(self.lr0, self.decay, self.patience, self.threshold)
    }
}

/// Hash tying a checkpoint to its backbone, training setup, basis and data.
pub fn run_hash(
    backbone: &BackboneConfig,
    train: &TrainConfig,
    basis: Fingerprint,
    dataset: Fingerprint,
) -> Fingerprint {
    Fingerprint::combine(&[
        backbone.render().as_bytes(),
        train.render().as_bytes(),
        &basis.0.to_le_bytes(),
        &dataset.0.to_le_bytes(),
    ])
}

/// Loss of a whitened network output against ground truth, with the
/// gradient taken w.r.t. that output.
///
/// PDC and WPDC compare whitened vectors (WPDC weights come from the raw
/// parameters); VDC and Wing act on de-whitened parameters and their
/// gradients are mapped back through the whitening. `frozen` replaces the
/// WPDC weights computed at the current prediction.
pub fn training_loss(
    kind: LossKind,
    output: &[f64; PARAM_DIM],
    p_g: &ParamVector,
    whitening: &ParamWhitening,
    basis: &MorphableBasis,
    wing: &WingConfig,
    frozen: Option<&WPDCWeights>,
) -> Result<LossReport> {
    let z = ParamVector(*output);
    let z_g = ParamVector(whitening.whiten(p_g));
    let p = whitening.dewhiten(output);
    let to_output = |mut r: LossReport| {
        for (g, s) in r.grad.iter_mut().zip(&whitening.std) {
            *g *= s;
        }
        r
    };
    let weighted = |p: &ParamVector| -> Result<LossReport> {
        let w = match frozen {
            Some(w) => w.clone(),
            None => wpdc_weights(p, p_g, basis)?,
        };
        Ok(wpdc_with_weights(&z, &z_g, &w))
    };
    Ok(match kind {
        LossKind::Pdc => pdc(&z, &z_g),
        LossKind::Wpdc => weighted(&p)?,
        LossKind::Vdc => to_output(vdc(&p, p_g, basis)?),
        LossKind::Wing => to_output(wing_landmarks(&p, p_g, basis, wing)?),
        LossKind::Merged => {
            let w = to_output(wing_landmarks(&p, p_g, basis, wing)?);
            combine_merged(&w, &weighted(&p)?)
        }
    })
}

/// Crop tensor of a record.
pub fn record_image(record: &SampleRecord, size: usize) -> Result<FeatureMap> {
    FeatureMap::new(3, size, size, record.image.iter().map(|&v| v as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_nme: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Validation NME of the untrained network.
    pub baseline_val_nme: f64,
    pub metrics: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    /// CSV log: `#` lines echo the configuration, then `epoch,lr,train_loss,val_nme`.
    pub fn metrics_csv(&self) -> String {
        let ck = &self.checkpoint;
        let t = &ck.train_config;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# schedule: sgd momentum={} lr0={} decay={} patience={} threshold={}",
            t.momentum, t.lr0, t.decay, t.patience, t.threshold
        );
        let _ = writeln!(
            out,
            "# loss={} epochs={} batch_size={} seed={}",
            t.loss.name(),
            t.epochs,
            t.batch_size,
            t.seed
        );
        let _ = writeln!(out, "# backbone: {}", ck.backbone_config.render().trim_end().replace('\n', " "));
        let _ = writeln!(
            out,
            "# config_hash={} basis={} dataset={}",
            ck.config_hash, ck.basis_fingerprint, ck.dataset_hash
        );
        let _ = writeln!(
            out,
            "# train={} val={} baseline_val_nme={:.6}",
            self.train_indices.len(),
            self.val_indices.len(),
            self.baseline_val_nme
        );
        out.push_str("epoch,lr,train_loss,val_nme\n");
        for m in &self.metrics {
            let _ = writeln!(out, "{},{},{:.6},{:.6}", m.epoch, m.lr, m.train_loss, m.val_nme);
        }
        out
    }
}

/// Deterministic train/validation split.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    idx.shuffle(&mut rng);
    if n < 2 {
        return (idx.clone(), idx);
    }
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    let mut val = val;
    val.sort_unstable();
    (train, val)
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Mean landmark NME of `net` over the given records.
pub fn mean_nme(
    net: &Backbone,
    whitening: &ParamWhitening,
    basis: &MorphableBasis,
    dataset: &Dataset,
    indices: &[usize],
    workers: usize,
) -> Result<f64> {
    let one = |&i: &usize| -> Result<f64> {
        let r = &dataset.records[i];
        let out = net.forward(&record_image(r, dataset.size)?)?;
        let p = whitening.dewhiten(&out);
        if !p.is_finite() {
            return Err(Error::NonFinite("validation prediction"));
        }
        nme(&project(basis, &p)?, &r.landmarks_g)
    };
    let errs: Vec<f64> = if workers <= 1 {
        indices.iter().map(one).collect::<Result<_>>()?
    } else {
        pool(workers)?.install(|| indices.par_iter().map(one).collect::<Result<_>>())?
    };
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

/// Seeded network with weight scales calibrated on the first training images.
pub fn initial_network(
    dataset: &Dataset,
    backbone_cfg: &BackboneConfig,
    train_indices: &[usize],
) -> Result<Backbone> {
    let mut net = Backbone::new(backbone_cfg.clone())?;
    let probe: Vec<FeatureMap> = train_indices
        .iter()
        .take(CALIBRATION_SAMPLES)
        .map(|&i| record_image(&dataset.records[i], dataset.size))
        .collect::<Result<_>>()?;
    net.calibrate(&probe)?;
    Ok(net)
}

fn round_f32(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

/// Trains a fresh network. Gradients of a batch are computed per sample and
/// summed in index order, so the result does not depend on `workers`.
pub fn train(
    dataset: &Dataset,
    basis: &MorphableBasis,
    backbone_cfg: &BackboneConfig,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    backbone_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    dataset.check_basis(basis)?;
    if dataset.size != backbone_cfg.input_size {
        return Err(Error::Shape(format!(
            "dataset crops are {}×{0}, backbone expects {}×{1}",
            dataset.size, backbone_cfg.input_size
        )));
    }
    let wing = cfg.wing()?;
    let config_hash = run_hash(backbone_cfg, cfg, basis.fingerprint(), dataset.config_hash);
    let (train_idx, val_idx) = split_indices(dataset.len(), cfg.val_fraction, cfg.seed);
    let whitening =
        ParamWhitening::fit(train_idx.iter().map(|&i| &dataset.records[i].p_g), config_hash)?;

    let mut net = initial_network(dataset, backbone_cfg, &train_idx)?;
    let n_w = net.num_weights();
    let mut velocity = vec![0.0; n_w];
    let mut sched = cfg.scheduler()?;
    let baseline = mean_nme(&net, &whitening, basis, dataset, &val_idx, workers)?;
    sched.baseline(baseline);
    log::info!(
        "training {} weights on {} samples ({} validation), baseline NME {baseline:.4}",
        n_w,
        train_idx.len(),
        val_idx.len()
    );
    let pool = pool(workers)?;

    let sample_grad = |net: &Backbone, i: usize| -> Result<(f64, Vec<f64>)> {
        let r = &dataset.records[i];
        let (out, tape) = net.forward_tape(&record_image(r, dataset.size)?)?;
        let loss = training_loss(cfg.loss, &out, &r.p_g, &whitening, basis, &wing, None)?;
        let mut g = vec![0.0; net.num_weights()];
        let d_out: [f64; PARAM_DIM] = loss.grad.as_slice().try_into().expect("62-dim gradient");
        net.backward(&tape, &d_out, &mut g)?;
        Ok((loss.value, g))
    };

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.copy_from_slice(&train_idx);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let results: Vec<(f64, Vec<f64>)> = if workers <= 1 {
                batch.iter().map(|&i| sample_grad(&net, i)).collect::<Result<_>>()?
            } else {
                pool.install(|| {
                    batch
                        .par_iter()
                        .map(|&i| sample_grad(&net, i))
                        .collect::<Result<_>>()
                })?
            };
            let mut grad = vec![0.0; n_w];
            let mut batch_loss = 0.0;
            for (l, g) in &results {
                batch_loss += l;
                for (a, b) in grad.iter_mut().zip(g) {
                    *a += b;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            if !batch_loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    loss: batch_loss * scale,
                });
            }
            loss_sum += batch_loss;
            for ((w, v), g) in net.weights_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = cfg.momentum * *v + g * scale;
                *w -= lr * *v;
            }
            round_f32(&mut velocity);
            round_f32(net.weights_mut());
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let val_nme = mean_nme(&net, &whitening, basis, dataset, &val_idx, workers)?;
        if !val_nme.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_nme,
            });
        }
        sched.step(val_nme);
        log::info!("epoch {epoch:>3}  lr {lr:.6}  loss {train_loss:.5}  val NME {val_nme:.4}");
        metrics.push(EpochMetrics {
            epoch,
            lr,
            train_loss,
            val_nme,
        });
    }

    let checkpoint = Checkpoint {
        config_hash,
        basis_fingerprint: basis.fingerprint(),
        dataset_hash: dataset.config_hash,
        backbone_config: backbone_cfg.clone(),
        train_config: cfg.clone(),
        epoch: cfg.epochs as u32,
        rng_seed: cfg.seed,
        scheduler: sched,
        whitening,
        network: net,
        velocity,
    };
    Ok(TrainOutcome {
        checkpoint,
        baseline_val_nme: baseline,
        metrics,
        train_indices: train_idx,
        val_indices: val_idx,
    })
}
