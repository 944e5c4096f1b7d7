use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::sampson_cost;

/// Affine RGB transform `c ↦ A·c + a` mapping image-1 colours towards image 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColourTransform {
    pub a_mat: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

impl Default for ColourTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColourTransform {
    pub fn identity() -> Self {
        Self { a_mat: Matrix3::identity(), offset: Vector3::zeros() }
    }

    #[inline]
    pub fn apply(&self, c: [f32; 3]) -> [f32; 3] {
        let v = self.a_mat * Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) + self.offset;
        [v.x as f32, v.y as f32, v.z as f32]
    }

    pub fn is_finite(&self) -> bool {
        self.a_mat.iter().chain(self.offset.iter()).all(|v| v.is_finite())
    }

    /// Largest absolute entry difference between two transforms.
    pub fn max_abs_diff(&self, other: &ColourTransform) -> f64 {
        (self.a_mat - other.a_mat).abs().max().max((self.offset - other.offset).abs().max())
    }
}

/// Weights of the matching cost and the pairwise regulariser.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchWeights {
    pub w_d: f64,
    pub w_c: f64,
    pub w_e: f64,
    pub w_p: f64,
    pub tau_p: f64,
}

impl MatchWeights {
    pub fn new(w_d: f64, w_c: f64, w_e: f64, w_p: f64) -> Self {
        Self { w_d, w_c, w_e, w_p, tau_p: 50.0 }
    }
}

/// `w_C · ‖A·c1 + a − c2‖₂` (unsquared).
#[inline]
pub fn colour_cost(c1: [f32; 3], c2: [f32; 3], t: &ColourTransform, w_c: f64) -> f64 {
    let m = t.apply(c1);
    let d: f64 = (0..3).map(|i| ((m[i] - c2[i]) as f64).powi(2)).sum();
    w_c * d.sqrt()
}

/// `min(τ_p, w_p · ‖(y1 − x1) − (y2 − x2)‖²)`, written in terms of the two flows.
#[inline]
pub fn pairwise_cost(flow1: [f32; 2], flow2: [f32; 2], w_p: f64, tau_p: f64) -> f64 {
    let du = (flow1[0] - flow2[0]) as f64;
    let dv = (flow1[1] - flow2[1]) as f64;
    (w_p * (du * du + dv * dv)).min(tau_p)
}

/// Epipolar term: weighted Sampson distance, zero when no fundamental matrix is given.
#[inline]
pub fn epipolar_cost(f: Option<&Matrix3<f64>>, x: [f64; 2], y: [f64; 2], w_e: f64) -> f64 {
    match f {
        Some(f) if w_e != 0.0 => sampson_cost(f, Vector2::new(x[0], x[1]), Vector2::new(y[0], y[1]), w_e).cost,
        _ => 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn colour_examples() {
        let id = ColourTransform::identity();
        assert_eq!(colour_cost([0.2, 0.4, 0.6], [0.2, 0.4, 0.6], &id, 5.0), 0.0);
        assert_eq!(colour_cost([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], &id, 10.0), 10.0);
        let a = colour_cost([0.1, 0.5, 0.9], [0.3, 0.2, 0.1], &id, 1.0);
        let b = colour_cost([0.1, 0.5, 0.9], [0.3, 0.2, 0.1], &id, 3.0);
        assert!((b - 3.0 * a).abs() < 1e-12);
    }

    #[test]
    fn pairwise_examples() {
        assert_eq!(pairwise_cost([3.0, 4.0], [3.0, 4.0], 1.0, 50.0), 0.0);
        assert_eq!(pairwise_cost([100.0, 0.0], [0.0, 0.0], 1.0, 50.0), 50.0);
        assert!((pairwise_cost([1.0, 1.0], [0.0, 0.0], 0.01, 50.0) - 0.02).abs() < 1e-12);
    }

    #[test]
    fn epipolar_term_absent_without_f() {
        assert_eq!(epipolar_cost(None, [1.0, 2.0], [5.0, 9.0], 1.0), 0.0);
        let f = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        assert_eq!(epipolar_cost(Some(&f), [10.0, 5.0], [14.0, 6.0], 1.0), 0.5);
    }
}
