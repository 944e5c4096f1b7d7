//! Raster and flow containers, resampling, file formats and flow colouring.

mod io;
mod raster;
mod viz;

pub use io::{
    decode_flo, encode_flo, read_flo, read_image, read_mask_pgm, read_pfm, write_flo, write_mask_pgm,
    write_pfm, write_png16, write_png8, FLO_TAG,
};
pub use raster::{is_valid_flow, BitMask, FlowField, Raster, UNKNOWN_FLOW, UNKNOWN_FLOW_THRESHOLD};
pub use viz::{color_wheel, flow_to_color, MaxMagnitude};

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bad .flo tag {0} (expected 202021.25)")]
    BadMagic(f32),
    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("invalid dimensions {width}x{height}")]
    BadDimensions { width: i64, height: i64 },
    #[error("unsupported channel count {0}")]
    ChannelCount(usize),
    #[error("downsampling factor must be >= 1, got {0}")]
    BadFactor(usize),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("image codec error: {0}")]
    Codec(#[from] image::ImageError),
}

impl ImageError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ImageError::Io { path: path.into(), source }
    }
}
