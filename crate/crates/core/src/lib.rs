//! Dense wide-baseline scene flow for two calibrated, independently moving cameras.
//!
//! The pipeline runs in four stages: DAISY + PatchMatch belief propagation
//! correspondence search ([`matcher`]), forward-backward occlusion detection and
//! matting-Laplacian filling ([`occlusion`]), four-frame variational refinement
//! and triangulation ([`sceneflow`]), and evaluation ([`metrics`]).

pub mod daisy;
pub mod geometry;
pub mod imagecore;
pub mod matcher;
pub mod metrics;
pub mod occlusion;
pub mod pipeline;
pub mod sceneflow;
pub mod synthetic;
