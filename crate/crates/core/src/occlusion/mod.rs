//! Occlusion handling: forward-backward consistency masks and filling of
//! occluded flow with a colour-aware matting Laplacian or plain diffusion.

mod fill;
mod laplacian;
mod mask;
mod sparse;

pub use fill::{diffusion_fill, laplacian_fill, local_linearity_report, LinearityReport};
pub use laplacian::build_matting_laplacian;
pub use mask::{forward_backward_mask, morphological_close};
pub use sparse::SparseSym;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum OcclusionError {
    #[error("inputs differ in size")]
    DimensionMismatch,
    #[error("every pixel is occluded")]
    AllOccluded,
    #[error("image is {0}x{1}, needs at least 3x3")]
    ImageTooSmall(usize, usize),
    #[error("expected an RGB image, got {0} channels")]
    NotRgb(usize),
    #[error("factorisation failed: {0}")]
    Factorization(String),
    #[error("invalid fill parameter: {0}")]
    BadParams(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FillParams {
    pub fb_threshold: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub closing_radius: usize,
}

impl Default for FillParams {
    fn default() -> Self {
        Self { fb_threshold: 3.0, epsilon: 1e-4, lambda: 5.0, closing_radius: 0 }
    }
}

impl FillParams {
    pub fn validate(&self) -> Result<(), OcclusionError> {
        if !(self.fb_threshold > 0.0) {
            return Err(OcclusionError::BadParams("fb_threshold must be positive"));
        }
        if !(self.lambda > 0.0) {
            return Err(OcclusionError::BadParams("lambda must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(OcclusionError::BadParams("epsilon must be positive"));
        }
        Ok(())
    }
}
