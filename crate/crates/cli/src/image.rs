//! Binary PPM (P6, maxval 255) input.

use std::path::Path;

use facealign::{Error, Result};

fn parse_error(path: &Path, offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        offset: offset as u64,
        record: None,
        message: message.into(),
    }
}

/// Reads a P6 file as `(width, height, pixels)` with pixels channel-major in `[0, 1]`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(parse_error(path, pos, "truncated PPM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P6" {
        return Err(parse_error(path, 0, format!("expected P6 magic, found {:?}", fields[0].1)));
    }
    let mut dims = [0usize; 3];
    for (d, (at, text)) in dims.iter_mut().zip(&fields[1..]) {
        *d = text
            .parse()
            .map_err(|_| parse_error(path, *at, format!("invalid header field {text:?}")))?;
    }
    let [w, h, maxval] = dims;
    if maxval != 255 {
        return Err(parse_error(path, fields[3].0, format!("maxval {maxval} unsupported, expected 255")));
    }
    pos += 1;
    let plane = w * h;
    let body = bytes.get(pos..pos + 3 * plane).ok_or_else(|| {
        parse_error(path, bytes.len(), format!("expected {} pixel bytes", 3 * plane))
    })?;
    let mut pixels = vec![0f32; 3 * plane];
    for (i, rgb) in body.chunks_exact(3).enumerate() {
        for c in 0..3 {
            pixels[c * plane + i] = rgb[c] as f32 / 255.0;
        }
    }
    Ok((w, h, pixels))
}
