//! File formats: TUM RGB-D sequences, depth containers, trajectories, images
//! and the config file.

mod config;
mod depth_io;
mod trajectory;
mod tum;

pub use config::{config_keys, load_config, parse_config};
pub use depth_io::{load_depth, read_depth, write_depth, DepthFormat, RAWF32_MAGIC, TUM_DEPTH_SCALE};
pub use trajectory::{
    format_trajectory_tum, parse_trajectory_tum, read_trajectory_tum, write_trajectory_tum, TrajectoryRecord,
};
pub use tum::{associate, load_tum_sequence, parse_index, tum_default_intrinsics, TumSequence, DEFAULT_MAX_DT};

use crate::imaging::RgbImage;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing index file {0}")]
    MissingIndexFile(PathBuf),
    #[error("{file}:{line}: malformed line: {reason}")]
    MalformedLine { file: PathBuf, line: usize, reason: String },
    #[error("no rgb/depth pairs within the timestamp tolerance")]
    EmptyAssociation,
    #[error("{0}: bad magic")]
    BadMagic(PathBuf),
    #[error("{path}: size mismatch: expected {expected} bytes, got {got}")]
    SizeMismatch { path: PathBuf, expected: usize, got: usize },
    #[error("{path}: unreadable: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: expected {expected}")]
    TypeError { key: String, expected: &'static str },
    #[error("config key `{key}`: {reason}")]
    OutOfRange { key: String, reason: &'static str },
    #[error("config: {0}")]
    ConfigSyntax(String),
    #[error("no intrinsics for {0}: add intrinsics.txt (`fx fy cx cy width height`)")]
    MissingIntrinsics(PathBuf),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

/// Read an 8-bit RGB (or gray, expanded) image into linear [0, 1] values.
pub fn load_rgb(path: &Path) -> Result<RgbImage, DataError> {
    let img = image::open(path)
        .map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::from_rgb8(w as usize, h as usize, img.as_raw()))
}

/// Write an RGB image as 8-bit PNG.
pub fn write_rgb_png(img: &RgbImage, path: &Path) -> Result<(), DataError> {
    image::save_buffer(path, &img.to_rgb8(), img.width as u32, img.height as u32, image::ColorType::Rgb8)
        .map_err(|e| DataError::UnreadableFile { path: path.to_path_buf(), reason: e.to_string() })
}
