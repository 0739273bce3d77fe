//! Depth map containers.
//!
//! `png16`: 16-bit single-channel PNG, value times `units_scale` is meters.
//! `rawf32`: `"UDGSDEP1"`, u32 width, u32 height (little-endian), then
//! `width * height` little-endian f32 meters in row-major order.
//! In both formats a stored 0, NaN or negative value is invalid.

use super::{io_err, DataError};
use crate::depth_filter::DepthMap;
use std::path::Path;

pub const RAWF32_MAGIC: &[u8; 8] = b"UDGSDEP1";
/// TUM stores depth in units of 1/5000 m.
pub const TUM_DEPTH_SCALE: f64 = 1.0 / 5000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthFormat {
    Png16,
    RawF32,
}

impl DepthFormat {
    /// Guess from the extension: `.png` is png16, anything else rawf32.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("png") => DepthFormat::Png16,
            _ => DepthFormat::RawF32,
        }
    }
}

impl std::str::FromStr for DepthFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "png16" => Ok(DepthFormat::Png16),
            "rawf32" => Ok(DepthFormat::RawF32),
            other => Err(format!("unknown depth format `{other}` (expected png16|rawf32)")),
        }
    }
}

/// Parse a rawf32 buffer.
pub fn read_depth(bytes: &[u8], path: &Path) -> Result<DepthMap, DataError> {
    if bytes.len() < 16 || &bytes[..8] != RAWF32_MAGIC {
        return Err(DataError::BadMagic(path.to_path_buf()));
    }
    let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| DataError::UnreadableFile { path: path.to_path_buf(), reason: "dimensions overflow".into() })?;
    if bytes.len() != expected {
        return Err(DataError::SizeMismatch { path: path.to_path_buf(), expected, got: bytes.len() });
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(DepthMap::from_values(w, h, values))
}

/// Load a depth file. `units_scale` applies to png16 only; rawf32 is meters.
pub fn load_depth(path: &Path, format: DepthFormat, units_scale: f64) -> Result<DepthMap, DataError> {
    match format {
        DepthFormat::RawF32 => {
            let bytes = std::fs::read(path)
                .map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?;
            read_depth(&bytes, path)
        }
        DepthFormat::Png16 => {
            let img = image::open(path)
                .map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?;
            let img = img.to_luma16();
            let (w, h) = img.dimensions();
            let values = img.as_raw().iter().map(|&v| v as f64 * units_scale).collect();
            let mut d = DepthMap::from_values(w as usize, h as usize, values);
            d.units_scale = units_scale;
            Ok(d)
        }
    }
}

/// Write a depth map. Invalid pixels are stored as 0.
pub fn write_depth(depth: &DepthMap, path: &Path, format: DepthFormat, units_scale: f64) -> Result<(), DataError> {
    let stored = |i: usize| if depth.valid[i] { depth.values[i] } else { 0.0 };
    match format {
        DepthFormat::RawF32 => {
            let mut buf = Vec::with_capacity(16 + 4 * depth.values.len());
            buf.extend_from_slice(RAWF32_MAGIC);
            buf.extend_from_slice(&(depth.width as u32).to_le_bytes());
            buf.extend_from_slice(&(depth.height as u32).to_le_bytes());
            for i in 0..depth.values.len() {
                buf.extend_from_slice(&(stored(i) as f32).to_le_bytes());
            }
            std::fs::write(path, buf).map_err(io_err(path))
        }
        DepthFormat::Png16 => {
            let raw: Vec<u16> = (0..depth.values.len())
                .map(|i| (stored(i) / units_scale).round().clamp(0.0, u16::MAX as f64) as u16)
                .collect();
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(depth.width as u32, depth.height as u32, raw)
                .expect("buffer matches dimensions");
            img.save(path).map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })
        }
    }
}
