//! Heatmap and quiver emission: binary PGM images with linear min–max
//! normalization and SVG line-segment overlays for velocity fields.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::fileio::atomic_write;
use crate::grid::RealGridField;
use crate::{AdvectaError, Result};

/// Write one frame as a binary PGM (P5, maxval 255) with linear min–max
/// normalization; returns the `(min, max)` used so callers can record it.
/// A constant frame maps to mid-gray.
pub fn write_pgm(path: &Path, field: &RealGridField) -> Result<(f64, f64)> {
    let values = field.values();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let (n1, n2) = values.dim();
    let mut bytes = format!("P5\n{n2} {n1}\n255\n").into_bytes();
    let span = hi - lo;
    for i in 0..n1 {
        for j in 0..n2 {
            let px = if span > 0.0 {
                ((values[[i, j]] - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                128
            };
            bytes.push(px);
        }
    }
    atomic_write(path, &bytes)?;
    Ok((lo, hi))
}

/// Load a PGM written by [`write_pgm`]; returns the quantized pixel grid.
pub fn read_pgm(path: &Path) -> Result<Array2<u8>> {
    let bytes = fs::read(path)?;
    let header_end = {
        // P5\n<w> <h>\n255\n
        let mut fields = 0;
        let mut idx = 0;
        while idx < bytes.len() && fields < 4 {
            while idx < bytes.len() && bytes[idx].is_ascii_whitespace() {
                idx += 1;
            }
            while idx < bytes.len() && !bytes[idx].is_ascii_whitespace() {
                idx += 1;
            }
            fields += 1;
        }
        idx + 1
    };
    let header = std::str::from_utf8(&bytes[..header_end.min(bytes.len())])
        .map_err(|_| AdvectaError::Data("PGM header is not ASCII".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("P5") {
        return Err(AdvectaError::Data("not a binary PGM".into()));
    }
    let w: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| AdvectaError::Data("bad PGM width".into()))?;
    let h: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| AdvectaError::Data("bad PGM height".into()))?;
    let maxval: usize = tokens
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| AdvectaError::Data("bad PGM maxval".into()))?;
    if maxval != 255 {
        return Err(AdvectaError::Data("expected maxval 255".into()));
    }
    let data = &bytes[header_end..];
    if data.len() != w * h {
        return Err(AdvectaError::Data(format!(
            "PGM payload has {} bytes, expected {}",
            data.len(),
            w * h
        )));
    }
    Ok(Array2::from_shape_vec((h, w), data.to_vec()).expect("shape checked above"))
}

/// Emit a velocity field as SVG line segments, one per retained grid point.
/// Points are subsampled by linear (row-major) index, so the segment count
/// is `ceil(n1*n2 / subsample)`.
pub fn write_quiver_svg(
    path: &Path,
    vx: &Array2<f64>,
    vy: &Array2<f64>,
    subsample: usize,
    scale: f64,
) -> Result<usize> {
    if vx.dim() != vy.dim() {
        return Err(AdvectaError::Data("velocity component shapes differ".into()));
    }
    if subsample == 0 {
        return Err(AdvectaError::Data("subsample must be at least 1".into()));
    }
    let (n1, n2) = vx.dim();
    let cell = 16.0;
    let (w, h) = (n2 as f64 * cell, n1 as f64 * cell);
    let mut svg = String::new();
    writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    )
    .unwrap();
    let mut count = 0usize;
    for p in (0..n1 * n2).step_by(subsample) {
        let (i, j) = (p / n2, p % n2);
        // axis 1 is the horizontal image axis; axis 0 points down
        let x0 = (j as f64 + 0.5) * cell;
        let y0 = (i as f64 + 0.5) * cell;
        let x1 = x0 + vy[[i, j]] * scale * cell;
        let y1 = y0 + vx[[i, j]] * scale * cell;
        writeln!(
            svg,
            "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"black\" stroke-width=\"1\"/>"
        )
        .unwrap();
        count += 1;
    }
    svg.push_str("</svg>\n");
    atomic_write(path, svg.as_bytes())?;
    Ok(count)
}
