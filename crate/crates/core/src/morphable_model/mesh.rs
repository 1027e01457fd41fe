//! Minimal Wavefront OBJ output: `v x y z` and 1-based `f a b c` lines.

use std::fmt::Write as _;
use std::path::Path;

use super::{MorphableBasis, Shape3D};
use crate::binio::write_file;
use crate::{Error, Result};

pub fn write_obj(shape: &Shape3D, triangles: &[[u32; 3]]) -> String {
    let mut out = String::with_capacity(shape.vertices.len() * 36 + triangles.len() * 16);
    for v in &shape.vertices {
        writeln!(out, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]).unwrap();
    }
    for t in triangles {
        writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).unwrap();
    }
    out
}

pub fn export_mesh(shape: &Shape3D, basis: &MorphableBasis, path: &Path) -> Result<()> {
    if shape.vertices.len() != basis.num_vertices() {
        return Err(Error::Shape(format!(
            "shape has {} vertices, basis topology has {}",
            shape.vertices.len(),
            basis.num_vertices()
        )));
    }
    write_file(path, write_obj(shape, basis.triangles()).as_bytes())
}

/// Reads back the subset written by [`write_obj`]; other line types are ignored.
pub fn parse_obj(text: &str) -> Result<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let bad = || Error::Config(format!("obj line {}: malformed {line:?}", lineno + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let xyz: Vec<f64> = it.map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
                vertices.push(<[f64; 3]>::try_from(xyz.as_slice()).map_err(|_| bad())?);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| s.parse::<u32>().ok().and_then(|i| i.checked_sub(1)).ok_or_else(bad))
                    .collect::<Result<_>>()?;
                faces.push(<[u32; 3]>::try_from(idx.as_slice()).map_err(|_| bad())?);
            }
            _ => {}
        }
    }
    Ok((vertices, faces))
}
