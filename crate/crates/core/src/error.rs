use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the matching engine and its I/O helpers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty image ({width}x{height})")]
    EmptyImage { width: usize, height: usize },
    #[error("buffer length {len} does not match {width}x{height}")]
    BufferSize { width: usize, height: usize, len: usize },
    #[error("image dimensions differ: left {left:?}, right {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid pyramid range: coarsest 2^{coarsest}, finest 2^{finest}")]
    PyramidRange { coarsest: u32, finest: u32 },
    #[error("level {level} is {width}x{height}, smaller than patch size {patch_size}")]
    LevelTooSmall {
        level: u32,
        width: usize,
        height: usize,
        patch_size: usize,
    },
    #[error("patch at ({x:.2}, {y:.2}) has no valid pixels")]
    EmptyPatch { x: f64, y: f64 },
    #[error("patch has no horizontal texture (hessian {hessian:e})")]
    DegeneratePatch { hessian: f64 },
    #[error("level set is empty")]
    EmptyLevelSet,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("calibration: {0}")]
    Calibration(String),
    #[error("scene: {0}")]
    Scene(String),
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("failed to decode {}: {msg}", path.display())]
    Decode { path: PathBuf, msg: String },
    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
