//! Dense correspondence search: DAISY + colour + epipolar unary costs optimised
//! with PatchMatch belief propagation over a 4-connected grid.

mod bidirectional;
mod colour;
mod cost;
mod pmbp;
mod schedule;

pub use bidirectional::{match_bidirectional, BidirectionalMatch, MatchParams};
pub use colour::{colour_residual, estimate_colour_transform, estimate_colour_transform_with};
pub use cost::{colour_cost, epipolar_cost, pairwise_cost, ColourTransform, MatchWeights};
pub use pmbp::{epipolar_angle, pmbp_optimize, MatchProblem, PmbpConfig, PmbpState};
pub use schedule::{MatchKind, Pass, PassSchedule};

use crate::daisy::DaisyError;

#[derive(Debug, thiserror::Error)]
pub enum MatchError {
    #[error("colour fit needs at least 4 pairs, got {0}")]
    TooFewColourPairs(usize),
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("expected an RGB image, got {0} channels")]
    NotRgb(usize),
    #[error("stereo matching needs a fundamental matrix")]
    MissingFundamental,
    #[error("schedule has no passes")]
    EmptySchedule,
    #[error("invalid weights: {0}")]
    BadWeights(&'static str),
    #[error("invalid matcher parameter: {0}")]
    BadParams(&'static str),
    #[error("prior flow is {0}x{1}, image is {2}x{3}")]
    PriorSize(usize, usize, usize, usize),
    #[error(transparent)]
    Daisy(#[from] DaisyError),
}
