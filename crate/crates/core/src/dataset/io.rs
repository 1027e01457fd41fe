//! Dataset container.
//!
//! Layout (little-endian): magic `FPDS`, version `u32`, basis fingerprint
//! `u64`, sampler config hash `u64`, record count `u32`, crop side `u32`,
//! sampler config text (`u32` length + UTF-8). Each record: `3·S·S` image
//! bytes, 62 × `f64` parameters, 68 × 2 × `f64` landmarks, `f64` |yaw| in
//! degrees, `u8` occlusion flag, `f64` lighting factor.

use std::path::Path;

use super::{quantize_pixel, Dataset, SampleRecord};
use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::hash::Fingerprint;
use crate::morphable_model::Landmarks2D;
use crate::{ParamVector, Result, NUM_LANDMARKS, PARAM_DIM};

const MAGIC: &[u8; 4] = b"FPDS";
const VERSION: u32 = 1;

pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u64(ds.basis_fingerprint.0);
    w.u64(ds.config_hash.0);
    w.u32(ds.records.len() as u32);
    w.u32(ds.size as u32);
    w.str(&ds.config_text);
    for r in &ds.records {
        for &v in &r.image {
            w.u8(quantize_pixel(v));
        }
        w.f64s(r.p_g.as_slice());
        for p in r.landmarks_g.points() {
            w.f64s(p);
        }
        w.f64(r.yaw_deg);
        w.u8(r.occluded as u8);
        w.f64(r.lighting);
    }
    w.buf
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_file(path, &dataset_bytes(ds))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut r = ByteReader::new(&bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let basis_fingerprint = Fingerprint(r.u64("basis fingerprint")?);
    let config_hash = Fingerprint(r.u64("config hash")?);
    let count = r.u32("record count")? as usize;
    let size = r.u32("crop size")? as usize;
    if size == 0 {
        return Err(r.error("crop size is zero"));
    }
    let config_text = r.str("sampler config")?;
    let plane = 3 * size * size;
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for i in 0..count {
        r.record = Some(i);
        let image = r
            .take(plane, "image")?
            .iter()
            .map(|&b| b as f32 / 255.0)
            .collect();
        let p_g = ParamVector::from_slice(&r.f64s(PARAM_DIM, "parameters")?)?;
        let flat = r.f64s(2 * NUM_LANDMARKS, "landmarks")?;
        let landmarks_g = Landmarks2D::new(flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
            .map_err(|e| r.error(e.to_string()))?;
        let yaw_deg = r.f64("yaw")?;
        let occluded = match r.u8("occlusion flag")? {
            0 => false,
            1 => true,
            other => return Err(r.error(format!("occlusion flag {other} is not 0 or 1"))),
        };
        let lighting = r.f64("lighting")?;
        records.push(SampleRecord {
            image,
            p_g,
            landmarks_g,
            yaw_deg,
            occluded,
            lighting,
        });
    }
    r.record = None;
    r.finish()?;
    Ok(Dataset {
        basis_fingerprint,
        config_hash,
        config_text,
        size,
        records,
    })
}
