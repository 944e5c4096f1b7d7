//! Four-frame variational scene flow: energy, coarse-to-fine refinement of the
//! matcher flows, and triangulation of the result into 3D motion.

mod energy;
mod output;
mod solve;

pub use output::{init_u3, read_ply, triangulate_scene_flow, write_depth_pfm, write_ply, PlyVertex, SceneFlowOutput};
pub use solve::{refine, RefineReport};

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::geometry::normalize_fundamental;
use crate::imagecore::{BitMask, FlowField, ImageError, Raster};
use crate::matcher::ColourTransform;
use energy::Level;

#[derive(Debug, thiserror::Error)]
pub enum SceneFlowError {
    #[error("inputs differ in size")]
    DimensionMismatch,
    #[error("expected RGB images, got {0} channels")]
    NotRgb(usize),
    #[error("image is {0}x{1}, needs at least 2x2")]
    TooSmall(usize, usize),
    #[error("invalid scene flow parameter: {0}")]
    BadParams(&'static str),
    #[error("energy became non-finite at pyramid level {level} ({width}x{height}), warp {warp}")]
    Diverged { level: usize, width: usize, height: usize, warp: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("ply: {0}")]
    Ply(String),
}

/// Regularised ℓ1 penaliser `Ψ(s²) = √(s² + ε)`.
#[inline]
pub fn psi(s2: f64, epsilon: f64) -> f64 {
    (s2 + epsilon).sqrt()
}

/// `dΨ/d(s²) = 0.5 / √(s² + ε)`.
#[inline]
pub fn psi_prime(s2: f64, epsilon: f64) -> f64 {
    0.5 / (s2 + epsilon).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneFlowParams {
    /// Epipolar weights at t and t+1.
    pub alpha: [f64; 2],
    /// Smoothness weights of u1, u2, u3.
    pub beta: [f64; 3],
    pub psi_epsilon: f64,
    /// Gradient-constancy weight inside each data term.
    pub gamma: f64,
    /// Pyramid scale factor between levels.
    pub eta: f64,
    /// Resolution of the coarsest level relative to the input.
    pub start_scale: f64,
    pub warps: usize,
    pub inner_iterations: usize,
    pub omega: f64,
    pub sor_iterations: usize,
    /// Multiplies [0, 1] intensities before evaluation; the weights assume 8-bit ranges.
    pub intensity_scale: f64,
    /// Divide epipolar residuals by the Sampson denominator.
    pub epipolar_sampson: bool,
    /// Rescale F to Frobenius norm √2 (per pyramid level).
    pub normalize_fundamental: bool,
}

impl Default for SceneFlowParams {
    fn default() -> Self {
        Self {
            alpha: [10.0, 10.0],
            beta: [31.0, 60.0, 200.0],
            psi_epsilon: 1e-6,
            gamma: 1.0,
            eta: 0.9,
            start_scale: 0.25,
            warps: 5,
            inner_iterations: 5,
            omega: 1.9,
            sor_iterations: 30,
            intensity_scale: 255.0,
            epipolar_sampson: false,
            normalize_fundamental: true,
        }
    }
}

impl SceneFlowParams {
    pub fn validate(&self) -> Result<(), SceneFlowError> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !self.alpha.iter().chain(&self.beta).all(|&v| pos(v)) {
            return Err(SceneFlowError::BadParams("alpha and beta must be positive"));
        }
        if !pos(self.psi_epsilon) || !(self.gamma >= 0.0) || !pos(self.intensity_scale) {
            return Err(SceneFlowError::BadParams("psi_epsilon, gamma or intensity_scale out of range"));
        }
        if !(pos(self.eta) && self.eta < 1.0) || !(pos(self.start_scale) && self.start_scale <= 1.0) {
            return Err(SceneFlowError::BadParams("eta must lie in (0, 1) and start_scale in (0, 1]"));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(SceneFlowError::BadParams("omega must lie in (0, 2)"));
        }
        Ok(())
    }
}

/// u1: view-1 optical flow t→t+1; u2: stereo flow at t; u3: loop-closure
/// correction. All on the view-1 pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FourFrameFlows {
    pub u1: FlowField,
    pub u2: FlowField,
    pub u3: FlowField,
}

impl FourFrameFlows {
    pub fn zeros(width: usize, height: usize) -> Self {
        let z = FlowField::zeros(width, height);
        Self { u1: z.clone(), u2: z.clone(), u3: z }
    }

    pub fn width(&self) -> usize {
        self.u1.width()
    }

    pub fn height(&self) -> usize {
        self.u1.height()
    }

    /// Per-pixel unknown vectors `[u1x, u1y, u2x, u2y, u3x, u3y]`; unknown flow becomes zero.
    pub fn to_unknowns(&self) -> Vec<[f64; 6]> {
        let at = |f: &FlowField, x, y| if f.is_valid(x, y) { f.get(x, y) } else { [0.0, 0.0] };
        let (w, h) = (self.width(), self.height());
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                let (a, b, c) = (at(&self.u1, x, y), at(&self.u2, x, y), at(&self.u3, x, y));
                [a[0] as f64, a[1] as f64, b[0] as f64, b[1] as f64, c[0] as f64, c[1] as f64]
            })
            .collect()
    }

    pub fn from_unknowns(w: usize, h: usize, u: &[[f64; 6]]) -> Self {
        assert_eq!(u.len(), w * h);
        let f = |k: usize| FlowField::from_fn(w, h, |x, y| [u[y * w + x][k] as f32, u[y * w + x][k + 1] as f32]);
        Self { u1: f(0), u2: f(2), u3: f(4) }
    }
}

/// Images, geometry and masks shared by energy evaluation and refinement.
#[derive(Clone, Copy)]
pub struct SceneFlowProblem<'a> {
    pub view1_t: &'a Raster,
    pub view2_t: &'a Raster,
    pub view1_t1: &'a Raster,
    pub view2_t1: &'a Raster,
    /// Maps view-1 points to view-2 lines at t and t+1.
    pub f_t: Matrix3<f64>,
    pub f_t1: Matrix3<f64>,
    /// Pixels whose data terms are disabled; `None` means none.
    pub occlusion: Option<&'a BitMask>,
    /// Maps view-1 colours to view 2.
    pub transform: ColourTransform,
}

impl SceneFlowProblem<'_> {
    fn check(&self, flows: &FourFrameFlows) -> Result<(usize, usize), SceneFlowError> {
        let (w, h) = (self.view1_t.width(), self.view1_t.height());
        for im in [self.view1_t, self.view2_t, self.view1_t1, self.view2_t1] {
            if (im.width(), im.height()) != (w, h) {
                return Err(SceneFlowError::DimensionMismatch);
            }
            if im.channels() != 3 {
                return Err(SceneFlowError::NotRgb(im.channels()));
            }
        }
        for f in [&flows.u1, &flows.u2, &flows.u3] {
            if (f.width(), f.height()) != (w, h) {
                return Err(SceneFlowError::DimensionMismatch);
            }
        }
        if self.occlusion.is_some_and(|m| (m.width(), m.height()) != (w, h)) {
            return Err(SceneFlowError::DimensionMismatch);
        }
        if w < 2 || h < 2 {
            return Err(SceneFlowError::TooSmall(w, h));
        }
        Ok((w, h))
    }

    /// View-1 images mapped through the colour transform.
    pub(crate) fn corrected_view1(&self) -> (Raster, Raster) {
        let t = &self.transform;
        let map = |img: &Raster| {
            Raster::from_fn(img.width(), img.height(), 3, |x, y, out| {
                let p = img.pixel(x, y);
                out.copy_from_slice(&t.apply([p[0], p[1], p[2]]));
            })
        };
        (map(self.view1_t), map(self.view1_t1))
    }

    pub(crate) fn fundamentals(&self, p: &SceneFlowParams) -> (Matrix3<f64>, Matrix3<f64>) {
        if p.normalize_fundamental {
            (normalize_fundamental(&self.f_t), normalize_fundamental(&self.f_t1))
        } else {
            (self.f_t, self.f_t1)
        }
    }

    fn full_level(&self, p: &SceneFlowParams) -> Level {
        let (v1t, v1n) = self.corrected_view1();
        let (ft, ft1) = self.fundamentals(p);
        let occ = match self.occlusion {
            Some(m) => m.data().to_vec(),
            None => vec![false; v1t.width() * v1t.height()],
        };
        Level::new([&v1t, self.view2_t, &v1n, self.view2_t1], ft, ft1, occ, *p)
    }
}

/// Energy broken down by family. `data`, `epipolar` and `smoothness` are
/// unweighted sums; `total` applies α and β.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyParts {
    pub total: f64,
    pub data: f64,
    pub epipolar: f64,
    pub smoothness: f64,
    pub epipolar_terms: [f64; 2],
    pub smoothness_terms: [f64; 3],
}

impl EnergyParts {
    fn finish(&mut self, p: &SceneFlowParams) {
        self.epipolar = self.epipolar_terms.iter().sum();
        self.smoothness = self.smoothness_terms.iter().sum();
        self.total = self.data + self.weighted_epipolar(p) + self.weighted_smoothness(p);
    }

    pub fn weighted_epipolar(&self, p: &SceneFlowParams) -> f64 {
        p.alpha[0] * self.epipolar_terms[0] + p.alpha[1] * self.epipolar_terms[1]
    }

    pub fn weighted_smoothness(&self, p: &SceneFlowParams) -> f64 {
        (0..3).map(|i| p.beta[i] * self.smoothness_terms[i]).sum()
    }
}

/// Gradients with respect to the unknowns, laid out per pixel as
/// `[u1x, u1y, u2x, u2y, u3x, u3y]` in row-major pixel order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGradient {
    pub data: Vec<f64>,
    /// Of `Σ αᵢ·E_E^i`.
    pub epipolar: Vec<f64>,
    /// Of `Σ βᵢ·E_S^i`.
    pub smoothness: Vec<f64>,
    pub total: Vec<f64>,
}

/// Full-resolution energy and gradient on f64 unknowns (see
/// [`FourFrameFlows::to_unknowns`]).
pub struct Evaluator {
    level: Level,
}

impl Evaluator {
    pub fn new(problem: &SceneFlowProblem, p: &SceneFlowParams) -> Result<Self, SceneFlowError> {
        p.validate()?;
        let (w, h) = (problem.view1_t.width(), problem.view1_t.height());
        problem.check(&FourFrameFlows::zeros(w, h))?;
        Ok(Self { level: problem.full_level(p) })
    }

    pub fn pixel_count(&self) -> usize {
        self.level.w * self.level.h
    }

    pub fn energy(&self, u: &[[f64; 6]]) -> EnergyParts {
        assert_eq!(u.len(), self.pixel_count());
        self.level.energy(u)
    }

    /// Gradient as assembled for the linearised solver, robust weights taken at `u`.
    pub fn gradient(&self, u: &[[f64; 6]]) -> EnergyGradient {
        assert_eq!(u.len(), self.pixel_count());
        let [data, epipolar, smoothness] = self.level.gradient(u);
        let total = (0..data.len()).map(|i| data[i] + epipolar[i] + smoothness[i]).collect();
        EnergyGradient { data, epipolar, smoothness, total }
    }
}

/// Discretised energy at full resolution.
pub fn energy_eval(flows: &FourFrameFlows, problem: &SceneFlowProblem, p: &SceneFlowParams) -> Result<EnergyParts, SceneFlowError> {
    problem.check(flows)?;
    Ok(Evaluator::new(problem, p)?.energy(&flows.to_unknowns()))
}

pub fn energy_gradient(flows: &FourFrameFlows, problem: &SceneFlowProblem, p: &SceneFlowParams) -> Result<EnergyGradient, SceneFlowError> {
    problem.check(flows)?;
    Ok(Evaluator::new(problem, p)?.gradient(&flows.to_unknowns()))
}
