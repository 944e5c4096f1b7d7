use nalgebra::{Matrix4, Vector4};

use super::{ColourTransform, MatchError};

/// Least-squares affine colour fit with a ridge pull towards the identity,
/// using `ρ = 1e-4 · pairs.len()`.
pub fn estimate_colour_transform(pairs: &[([f32; 3], [f32; 3])]) -> Result<ColourTransform, MatchError> {
    estimate_colour_transform_with(pairs, 1e-4 * pairs.len() as f64)
}

/// Minimises `Σ‖A·c1 + a − c2‖² + ρ(‖A − I‖²_F + ‖a‖²)` through the 4×4 normal
/// equations of the homogeneous-augmented inputs `[c1, 1]`.
pub fn estimate_colour_transform_with(pairs: &[([f32; 3], [f32; 3])], rho: f64) -> Result<ColourTransform, MatchError> {
    if pairs.len() < 4 {
        return Err(MatchError::TooFewColourPairs(pairs.len()));
    }
    let mut normal = Matrix4::<f64>::zeros();
    // one right-hand side per output channel
    let mut rhs = [Vector4::<f64>::zeros(); 3];
    for (c1, c2) in pairs {
        let x = Vector4::new(c1[0] as f64, c1[1] as f64, c1[2] as f64, 1.0);
        normal += x * x.transpose();
        for (k, r) in rhs.iter_mut().enumerate() {
            *r += x * c2[k] as f64;
        }
    }
    normal += Matrix4::identity() * rho;
    for (k, r) in rhs.iter_mut().enumerate() {
        r[k] += rho;
    }
    let mut t = ColourTransform::identity();
    let solve = |b: &Vector4<f64>| -> Vector4<f64> {
        match normal.cholesky() {
            Some(ch) => ch.solve(b),
            // rank-deficient and unregularised: minimum-norm solution
            None => normal.pseudo_inverse(1e-12).map(|p| p * b).unwrap_or_else(|_| Vector4::zeros()),
        }
    };
    for (k, r) in rhs.iter().enumerate() {
        let beta = solve(r);
        for j in 0..3 {
            t.a_mat[(k, j)] = beta[j];
        }
        t.offset[k] = beta[3];
    }
    Ok(t)
}

/// Sum of squared residuals `Σ‖A·c1 + a − c2‖²`.
pub fn colour_residual(pairs: &[([f32; 3], [f32; 3])], t: &ColourTransform) -> f64 {
    pairs
        .iter()
        .map(|(c1, c2)| {
            let m = t.apply(*c1);
            (0..3).map(|i| ((m[i] - c2[i]) as f64).powi(2)).sum::<f64>()
        })
        .sum()
}
