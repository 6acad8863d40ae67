//! Binary PGM (P5) dumps for masks and scalar fields.
//!
//! Masks are written 8-bit (0/255). Scalar fields are written 16-bit,
//! normalized per file, with the normalization recorded in a JSON sidecar
//! next to the image (`<path>.json`).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{BinaryMask, Field};

#[derive(Debug, Serialize, Deserialize)]
pub struct FieldSidecar {
    pub height: usize,
    pub width: usize,
    pub extent: f64,
    /// value mapped to sample 0
    pub min: f64,
    /// value mapped to sample 65535
    pub max: f64,
}

pub fn write_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(mask.spec.len() + 32);
    write!(buf, "P5\n{} {}\n255\n", mask.spec.width, mask.spec.height)?;
    buf.extend(mask.values.iter().map(|&v| if v == 0 { 0u8 } else { 255u8 }));
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_field_pgm16(field: &Field<f32>, path: &Path) -> Result<()> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &field.values {
        lo = lo.min(v as f64);
        hi = hi.max(v as f64);
    }
    if !lo.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut buf = Vec::with_capacity(field.spec.len() * 2 + 32);
    write!(buf, "P5\n{} {}\n65535\n", field.spec.width, field.spec.height)?;
    for &v in &field.values {
        let s = ((v as f64 - lo) / span * 65535.0).round().clamp(0.0, 65535.0) as u16;
        // 16-bit PGM samples are big-endian
        buf.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, buf)?;

    let sidecar = FieldSidecar {
        height: field.spec.height,
        width: field.spec.width,
        extent: field.spec.extent,
        min: lo,
        max: hi,
    };
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    fs::write(side, serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}
