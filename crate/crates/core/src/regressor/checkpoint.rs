//! Trained model container.
//!
//! Layout (little-endian): magic `FPKT`, version `u32`, config hash `u64`,
//! basis fingerprint `u64`, dataset hash `u64`, backbone config text, train
//! config text, epoch `u32`, RNG seed `u64`, scheduler state (lr, decay,
//! patience, threshold, best NME, epochs without improvement), whitening
//! (62 means, 62 stds, config hash), then `u32` blob count and for each
//! blob its name, `u32` length and `f32` weights, then the momentum
//! buffer in the same blob order. Weights are kept at `f32` precision
//! during training, so the round trip is exact.

use std::path::Path;

use super::{Backbone, BackboneConfig, ParamWhitening, PlateauScheduler, TrainConfig};
use crate::attention::FeatureMap;
use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::config::KeyValueConfig;
use crate::dataset::SampleRecord;
use crate::evaluation::Predictor;
use crate::hash::Fingerprint;
use crate::{Error, ParamVector, Result, PARAM_DIM};

const MAGIC: &[u8; 4] = b"FPKT";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config_hash: Fingerprint,
    pub basis_fingerprint: Fingerprint,
    pub dataset_hash: Fingerprint,
    pub backbone_config: BackboneConfig,
    pub train_config: TrainConfig,
    pub epoch: u32,
    pub rng_seed: u64,
    pub scheduler: PlateauScheduler,
    pub whitening: ParamWhitening,
    pub network: Backbone,
    /// SGD momentum buffer, aligned with the network weights.
    pub velocity: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::default();
        w.bytes(MAGIC);
        w.u32(VERSION);
        w.u64(self.config_hash.0);
        w.u64(self.basis_fingerprint.0);
        w.u64(self.dataset_hash.0);
        w.str(&self.backbone_config.render());
        w.str(&self.train_config.render());
        w.u32(self.epoch);
        w.u64(self.rng_seed);
        let s = &self.scheduler;
        w.f64(s.lr());
        w.f64(s.decay());
        w.u32(s.patience() as u32);
        w.f64(s.threshold());
        w.f64(s.best());
        w.u32(s.bad_epochs() as u32);
        w.f64s(&self.whitening.mean);
        w.f64s(&self.whitening.std);
        w.u64(self.whitening.config_hash.0);
        let blobs = &self.network.layout().blobs;
        w.u32(blobs.len() as u32);
        for buf in [self.network.weights(), &self.velocity] {
            for b in blobs {
                w.str(&b.name);
                w.u32(b.range.len() as u32);
                for &v in &buf[b.range.clone()] {
                    w.bytes(&(v as f32).to_le_bytes());
                }
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = ByteReader::new(bytes, path);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let config_hash = Fingerprint(r.u64("config hash")?);
        let basis_fingerprint = Fingerprint(r.u64("basis fingerprint")?);
        let dataset_hash = Fingerprint(r.u64("dataset hash")?);
        let backbone_config =
            BackboneConfig::parse(&r.str("backbone config")?).map_err(|e| r.error(e.to_string()))?;
        let train_config =
            TrainConfig::parse(&r.str("train config")?).map_err(|e| r.error(e.to_string()))?;
        let epoch = r.u32("epoch")?;
        let rng_seed = r.u64("rng seed")?;
        let (lr, decay) = (r.f64("lr")?, r.f64("decay")?);
        let patience = r.u32("patience")? as usize;
        let threshold = r.f64("threshold")?;
        let best = r.f64("best NME")?;
        let bad = r.u32("epochs without improvement")? as usize;
        let scheduler = PlateauScheduler::from_state(lr, decay, patience, threshold, best, bad)
            .map_err(|e| r.error(e.to_string()))?;
        let mean: [f64; PARAM_DIM] = r.f64s(PARAM_DIM, "whitening mean")?.try_into().unwrap();
        let std: [f64; PARAM_DIM] = r.f64s(PARAM_DIM, "whitening std")?.try_into().unwrap();
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(r.error("whitening std must be positive"));
        }
        let whitening = ParamWhitening {
            mean,
            std,
            config_hash: Fingerprint(r.u64("whitening hash")?),
        };
        let mut network = Backbone::new(backbone_config.clone()).map_err(|e| r.error(e.to_string()))?;
        let layout = network.layout().clone();
        let count = r.u32("blob count")? as usize;
        if count != layout.blobs.len() {
            return Err(r.error(format!(
                "{count} blobs stored, backbone config defines {}",
                layout.blobs.len()
            )));
        }
        let mut bufs = [vec![0.0; layout.total], vec![0.0; layout.total]];
        for buf in &mut bufs {
            for (i, b) in layout.blobs.iter().enumerate() {
                r.record = Some(i);
                let name = r.str("blob name")?;
                let len = r.u32("blob length")? as usize;
                if name != b.name || len != b.range.len() {
                    return Err(r.error(format!(
                        "blob {name:?} ({len}) does not match {:?} ({})",
                        b.name,
                        b.range.len()
                    )));
                }
                let raw = r.take(4 * len, "blob data")?;
                for (dst, c) in buf[b.range.clone()].iter_mut().zip(raw.chunks_exact(4)) {
                    *dst = f32::from_le_bytes(c.try_into().unwrap()) as f64;
                }
            }
        }
        r.record = None;
        r.finish()?;
        let [weights, velocity] = bufs;
        network.set_weights(weights)?;
        Ok(Checkpoint {
            config_hash,
            basis_fingerprint,
            dataset_hash,
            backbone_config,
            train_config,
            epoch,
            rng_seed,
            scheduler,
            whitening,
            network,
            velocity,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?, path)
    }

    /// Fails with both hashes when `basis` is not the one trained against.
    pub fn check_basis(&self, basis_fingerprint: Fingerprint) -> Result<()> {
        if basis_fingerprint != self.basis_fingerprint {
            return Err(Error::HashMismatch {
                what: "checkpoint basis fingerprint".into(),
                expected: self.basis_fingerprint.to_string(),
                found: basis_fingerprint.to_string(),
            });
        }
        Ok(())
    }
}

/// Network output mapped back to raw parameters.
pub fn predict(
    image: &FeatureMap,
    checkpoint: &Checkpoint,
    whitening: &ParamWhitening,
) -> Result<ParamVector> {
    whitening.check(checkpoint.config_hash)?;
    let out = checkpoint.network.forward(image)?;
    Ok(whitening.dewhiten(&out))
}

impl Predictor for Checkpoint {
    fn name(&self) -> &str {
        "model"
    }
    fn predict(&self, record: &SampleRecord) -> Result<ParamVector> {
        let size = self.backbone_config.input_size;
        let image = FeatureMap::new(3, size, size, record.image.iter().map(|&v| v as f64).collect())
            .map_err(|_| {
                Error::Shape(format!(
                    "record image has {} values, model expects 3×{size}×{size}",
                    record.image.len()
                ))
            })?;
        predict(&image, self, &self.whitening)
    }
}
