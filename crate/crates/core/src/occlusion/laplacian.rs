use nalgebra::{Matrix3, Vector3};

use super::{OcclusionError, SparseSym};
use crate::imagecore::Raster;

/// Matting Laplacian over all 3×3 windows lying fully inside `image` (RGB).
///
/// Pixel `(x, y)` has index `y·width + x`.
pub fn build_matting_laplacian(image: &Raster, epsilon: f64) -> Result<SparseSym, OcclusionError> {
    let (w, h) = (image.width(), image.height());
    if image.channels() != 3 {
        return Err(OcclusionError::NotRgb(image.channels()));
    }
    if w < 3 || h < 3 {
        return Err(OcclusionError::ImageTooSmall(w, h));
    }
    const NW: f64 = 9.0;
    let mut trip = Vec::with_capacity((w - 2) * (h - 2) * 81);
    let mut idx = [0usize; 9];
    let mut col = [Vector3::<f64>::zeros(); 9];
    for cy in 1..h - 1 {
        for cx in 1..w - 1 {
            let mut n = 0;
            for dy in 0..3 {
                for dx in 0..3 {
                    let (x, y) = (cx + dx - 1, cy + dy - 1);
                    let p = image.pixel(x, y);
                    idx[n] = y * w + x;
                    col[n] = Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
                    n += 1;
                }
            }
            let mu = col.iter().sum::<Vector3<f64>>() / NW;
            let mut cov = Matrix3::zeros();
            for c in &col {
                let d = c - mu;
                cov += d * d.transpose();
            }
            cov /= NW;
            let reg = cov + Matrix3::identity() * (epsilon / NW);
            let inv = reg
                .cholesky()
                .map(|c| c.inverse())
                .ok_or_else(|| OcclusionError::Factorization("window covariance".into()))?;
            let centred: Vec<Vector3<f64>> = col.iter().map(|c| c - mu).collect();
            for i in 0..9 {
                let t = inv * centred[i];
                for j in 0..9 {
                    let delta = if i == j { 1.0 } else { 0.0 };
                    let v = delta - (1.0 + t.dot(&centred[j])) / NW;
                    trip.push((idx[i], idx[j], v));
                }
            }
        }
    }
    Ok(SparseSym::from_triplets(w * h, &trip))
}
