use nalgebra::{Matrix3x4, Matrix4, RowVector4, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TriangulationError {
    #[error("triangulated point is at infinity (|w| = {0:e})")]
    PointAtInfinity(f64),
}

/// Homogeneous linear triangulation of the correspondence `x` (view 1) ↔ `y` (view 2).
///
/// Each row of the 4×4 system is normalised before the SVD. A rank-deficient
/// system (coincident rays) has no unique intersection and is reported as a
/// point at infinity, like a vanishing homogeneous coordinate.
pub fn triangulate_dlt(
    p1: &Matrix3x4<f64>,
    p2: &Matrix3x4<f64>,
    x: Vector2<f64>,
    y: Vector2<f64>,
) -> Result<Vector3<f64>, TriangulationError> {
    let rows: [RowVector4<f64>; 4] = [
        p1.row(2) * x.x - p1.row(0),
        p1.row(2) * x.y - p1.row(1),
        p2.row(2) * y.x - p2.row(0),
        p2.row(2) * y.y - p2.row(1),
    ];
    let mut a = Matrix4::zeros();
    for (i, r) in rows.iter().enumerate() {
        let n = r.norm();
        a.set_row(i, &if n > 0.0 { r / n } else { *r });
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let s = svd.singular_values;
    let imin = s.imin();
    let second = s.iter().enumerate().filter(|&(i, _)| i != imin).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    if second <= 1e-10 * s.max() {
        return Err(TriangulationError::PointAtInfinity(0.0));
    }
    let h = v_t.row(imin);
    let w = h[3];
    if w.abs() < 1e-12 {
        return Err(TriangulationError::PointAtInfinity(w));
    }
    Ok(Vector3::new(h[0] / w, h[1] / w, h[2] / w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraCalib;
    use nalgebra::{Matrix3, Vector4};

    fn rig() -> (Matrix3x4<f64>, Matrix3x4<f64>) {
        let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0);
        let c1 = CameraCalib::new(k, Matrix3::identity(), Vector3::zeros()).unwrap();
        let r = nalgebra::Rotation3::from_euler_angles(0.02, -0.2, 0.01).into_inner();
        let c2 = CameraCalib::new(k, r, Vector3::new(-0.6, 0.05, 0.1)).unwrap();
        (c1.projection(), c2.projection())
    }

    fn project(p: &Matrix3x4<f64>, x: &Vector3<f64>) -> Vector2<f64> {
        let h = p * Vector4::new(x.x, x.y, x.z, 1.0);
        Vector2::new(h.x / h.z, h.y / h.z)
    }

    #[test]
    fn projection_oracle() {
        let (p1, p2) = rig();
        for pt in [Vector3::new(0.3, -0.2, 4.0), Vector3::new(-1.0, 0.5, 7.5), Vector3::new(0.0, 0.0, 2.0)] {
            let x = triangulate_dlt(&p1, &p2, project(&p1, &pt), project(&p2, &pt)).unwrap();
            assert!((x - pt).norm() < 1e-6, "{x} vs {pt}");
        }
    }

    #[test]
    fn coincident_rays_fail() {
        let (p1, _) = rig();
        let x = Vector2::new(100.0, 80.0);
        assert!(matches!(triangulate_dlt(&p1, &p1, x, x), Err(TriangulationError::PointAtInfinity(_))));
    }

    #[test]
    fn perturbation_moves_result_continuously() {
        let (p1, p2) = rig();
        let pt = Vector3::new(0.3, -0.2, 4.0);
        let (x, y) = (project(&p1, &pt), project(&p2, &pt));
        let mut prev = triangulate_dlt(&p1, &p2, x, y).unwrap();
        for i in 1..=20 {
            let d = i as f64 * 0.05;
            let cur = triangulate_dlt(&p1, &p2, x + Vector2::new(d, 0.0), y).unwrap();
            // a 0.05 px step moves a point at 4 units depth by millimetres, not metres
            assert!((cur - prev).norm() < 0.05, "jump at step {i}");
            prev = cur;
        }
    }
}
