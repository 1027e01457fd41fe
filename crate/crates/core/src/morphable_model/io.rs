//! Binary basis file.
//!
//! Layout (little-endian): magic `M3DM`, version `u32`, `N: u32`, mean
//! `3N × f64`, identity basis `3N × 40 × f64` row-major, expression basis
//! `3N × 10 × f64`, 68 landmark indices `u32`; then the mesh topology
//! (`u32` count, `3 × u32` per triangle) and the 40 + 10 coefficient prior
//! scales as `f64`.

use std::path::Path;

use super::{MorphableBasis, NUM_EXP, NUM_ID, NUM_LANDMARKS};
use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::Result;

const MAGIC: &[u8; 4] = b"M3DM";
const VERSION: u32 = 1;

pub(super) fn to_bytes(b: &MorphableBasis) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(MAGIC);
    w.u32(VERSION);
    w.u32(b.num_vertices as u32);
    w.f64s(&b.mean_shape);
    w.f64s(&b.id_basis);
    w.f64s(&b.exp_basis);
    for &i in &b.landmark_indices {
        w.u32(i);
    }
    w.u32(b.triangles.len() as u32);
    for t in &b.triangles {
        for &i in t {
            w.u32(i);
        }
    }
    w.f64s(&b.id_scale);
    w.f64s(&b.exp_scale);
    w.buf
}

pub(super) fn from_bytes(bytes: &[u8], path: &Path) -> Result<MorphableBasis> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let n = r.u32("vertex count")? as usize;
    let mean = r.f64s(3 * n, "mean shape")?;
    let id = r.f64s(3 * n * NUM_ID, "identity basis")?;
    let exp = r.f64s(3 * n * NUM_EXP, "expression basis")?;
    let landmarks = (0..NUM_LANDMARKS)
        .map(|_| r.u32("landmark index"))
        .collect::<Result<Vec<_>>>()?;
    let ntri = r.u32("triangle count")? as usize;
    let mut triangles = Vec::with_capacity(ntri.min(1 << 20));
    for _ in 0..ntri {
        triangles.push([r.u32("triangle")?, r.u32("triangle")?, r.u32("triangle")?]);
    }
    let id_scale = r.f64s(NUM_ID, "identity scales")?;
    let exp_scale = r.f64s(NUM_EXP, "expression scales")?;
    r.finish()?;
    MorphableBasis::new(mean, id, exp, landmarks, triangles, id_scale, exp_scale)
}

/// Serialized bytes of a basis (the same bytes [`save_basis`] writes).
pub fn basis_bytes(basis: &MorphableBasis) -> Vec<u8> {
    to_bytes(basis)
}

pub fn save_basis(basis: &MorphableBasis, path: &Path) -> Result<()> {
    write_file(path, &to_bytes(basis))
}

pub fn load_basis(path: &Path) -> Result<MorphableBasis> {
    from_bytes(&read_file(path)?, path)
}
