//! Text, CSV and pixmap output.

use std::fmt::Write;
use std::path::Path;

use super::{EvalTable, BUCKET_LABELS};
use crate::morphable_model::Landmarks2D;
use crate::{Error, Result};

pub const CSV_HEADER: &str = "method,bucket_0_30,bucket_30_60,bucket_60_90,mean,std,n0,n1,n2";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

/// Fixed-width table: Method, three yaw buckets, Mean, Std.
pub fn report_text(tables: &[EvalTable]) -> String {
    let width = tables
        .iter()
        .map(|t| t.method.chars().count())
        .max()
        .unwrap_or(0)
        .max("Method".len());
    let mut out = String::new();
    let _ = write!(out, "{:<width$}", "Method");
    for h in BUCKET_LABELS.iter().chain(&["Mean", "Std"]) {
        let _ = write!(out, "  {h:>10}");
    }
    out.push('\n');
    for t in tables {
        let _ = write!(out, "{:<width$}", t.method);
        for v in t.bucket_means.iter().chain(&[Some(t.mean), Some(t.std)]) {
            let _ = write!(out, "  {:>10}", cell(*v));
        }
        out.push('\n');
    }
    out
}

/// One row per table under [`CSV_HEADER`]; empty fields for absent buckets.
pub fn report_csv(tables: &[EvalTable]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for t in tables {
        let b: Vec<String> = t
            .bucket_means
            .iter()
            .map(|v| v.map_or_else(String::new, |v| format!("{v:.3}")))
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{:.3},{:.3},{},{},{}",
            t.method, b[0], b[1], b[2], t.mean, t.std, t.counts[0], t.counts[1], t.counts[2]
        );
    }
    out
}

/// Nearest pixel `(row, col)` of each point inside a `size × size` image.
pub fn marker_pixels(points: &Landmarks2D, size: usize) -> Vec<Option<(usize, usize)>> {
    points
        .points()
        .iter()
        .map(|p| {
            let (c, r) = (p[0].round(), p[1].round());
            (c >= 0.0 && r >= 0.0 && (c as usize) < size && (r as usize) < size)
                .then_some((r as usize, c as usize))
        })
        .collect()
}

const TRUTH_COLOUR: [u8; 3] = [0, 255, 0];
const PRED_COLOUR: [u8; 3] = [255, 0, 0];

/// Binary PPM of a `3 × size × size` image with ground truth as green
/// crosses and predictions as red dots.
pub fn overlay_ppm(
    image: &[f32],
    size: usize,
    truth: &Landmarks2D,
    pred: &Landmarks2D,
) -> Result<Vec<u8>> {
    let plane = size * size;
    if image.len() != 3 * plane {
        return Err(Error::Shape(format!(
            "overlay image has {} values, expected 3×{size}×{size}",
            image.len()
        )));
    }
    let mut rgb: Vec<u8> = (0..plane)
        .flat_map(|i| (0..3).map(move |c| (c, i)))
        .map(|(c, i)| crate::dataset::quantize_pixel(image[c * plane + i]))
        .collect();
    let mut put = |r: usize, c: usize, col: [u8; 3]| {
        rgb[3 * (r * size + c)..3 * (r * size + c) + 3].copy_from_slice(&col);
    };
    for (r, c) in marker_pixels(truth, size).into_iter().flatten() {
        for d in -2i64..=2 {
            for (rr, cc) in [(r as i64 + d, c as i64), (r as i64, c as i64 + d)] {
                if (0..size as i64).contains(&rr) && (0..size as i64).contains(&cc) {
                    put(rr as usize, cc as usize, TRUTH_COLOUR);
                }
            }
        }
    }
    for (r, c) in marker_pixels(pred, size).into_iter().flatten() {
        put(r, c, PRED_COLOUR);
    }
    let mut out = format!("P6\n{size} {size}\n255\n").into_bytes();
    out.extend_from_slice(&rgb);
    Ok(out)
}

pub fn write_overlay(
    path: &Path,
    image: &[f32],
    size: usize,
    truth: &Landmarks2D,
    pred: &Landmarks2D,
) -> Result<()> {
    let bytes = overlay_ppm(image, size, truth, pred)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
