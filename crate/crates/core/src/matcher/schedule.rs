use serde::{Deserialize, Serialize};

use super::{MatchError, MatchWeights};

/// Which correspondence problem is being solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    /// Between the two cameras at one time step; uses the epipolar term.
    Stereo,
    /// Within one camera over time.
    OpticalFlow,
}

/// One PMBP pass: weights, sweep count and per-pass switches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pass {
    pub weights: MatchWeights,
    pub iterations: usize,
    /// Re-fit the affine colour transform from consistent pixels after this pass.
    pub refit_colour: bool,
    /// Look up image-2 descriptors from a dense per-pixel cache (nearest pixel).
    #[serde(default)]
    pub dense_descriptors: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassSchedule {
    passes: Vec<Pass>,
}

impl PassSchedule {
    pub fn new(passes: Vec<Pass>) -> Result<Self, MatchError> {
        if passes.is_empty() {
            return Err(MatchError::EmptySchedule);
        }
        if passes.iter().any(|p| !(p.weights.tau_p > 0.0)) {
            return Err(MatchError::BadWeights("tau_p must be positive"));
        }
        Ok(Self { passes })
    }

    /// Four passes of two iterations; `w_C` rises to 10 once a colour transform
    /// is available and `w_p` ramps through 0.01, 0.02, 0.1, 1.
    pub fn stereo() -> Self {
        let pass = |w_c, w_p| Pass {
            weights: MatchWeights::new(1.0, w_c, 1.0, w_p),
            iterations: 2,
            refit_colour: true,
            dense_descriptors: false,
        };
        Self { passes: vec![pass(1.0, 0.01), pass(10.0, 0.02), pass(10.0, 0.1), pass(10.0, 1.0)] }
    }

    /// Two passes of 6 and 4 iterations with `(w_D, w_C, w_E, w_p) = (1, 20, 0, 0.01)`;
    /// the first pass uses dense precomputed descriptors.
    pub fn optical_flow() -> Self {
        let weights = MatchWeights::new(1.0, 20.0, 0.0, 0.01);
        Self {
            passes: vec![
                Pass { weights, iterations: 6, refit_colour: true, dense_descriptors: true },
                Pass { weights, iterations: 4, refit_colour: true, dense_descriptors: false },
            ],
        }
    }

    pub fn for_kind(kind: MatchKind) -> Self {
        match kind {
            MatchKind::Stereo => Self::stereo(),
            MatchKind::OpticalFlow => Self::optical_flow(),
        }
    }

    pub fn passes(&self) -> &[Pass] {
        &self.passes
    }
}
