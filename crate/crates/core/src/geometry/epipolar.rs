use nalgebra::{Matrix3, Vector2, Vector3};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EpipolarError {
    #[error("point coincides with the epipole; epipolar line is undefined")]
    AtEpipole,
}

/// Result of a Sampson evaluation; `degenerate` is set when the gradient
/// denominator vanishes and the cost was forced to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sampson {
    pub cost: f64,
    pub degenerate: bool,
}

const DEGENERATE_DENOMINATOR: f64 = 1e-12;

/// Weighted Sampson distance `w·(yᵀFx)² / ((Fx)₁² + (Fx)₂² + (Fᵀy)₁² + (Fᵀy)₂²)`
/// for pixel `x` in image 1 and `y` in image 2.
#[inline]
pub fn sampson_cost(f: &Matrix3<f64>, x: Vector2<f64>, y: Vector2<f64>, weight: f64) -> Sampson {
    let xh = Vector3::new(x.x, x.y, 1.0);
    let yh = Vector3::new(y.x, y.y, 1.0);
    let fx = f * xh;
    let fty = f.tr_mul(&yh);
    let denom = fx.x * fx.x + fx.y * fx.y + fty.x * fty.x + fty.y * fty.y;
    if denom < DEGENERATE_DENOMINATOR {
        return Sampson { cost: 0.0, degenerate: true };
    }
    let r = yh.dot(&fx);
    Sampson { cost: weight * r * r / denom, degenerate: false }
}

/// Which image the epipolar line lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineImage {
    /// `point` is in image 1 and the line `Fx` is in image 2.
    Second,
    /// `point` is in image 2 and the line `Fᵀy` is in image 1.
    First,
}

/// Unit direction of the epipolar line induced by `point`. The sign is fixed
/// so the first component is non-negative (second component on ties).
pub fn epipolar_direction(f: &Matrix3<f64>, point: Vector2<f64>, side: LineImage) -> Result<Vector2<f64>, EpipolarError> {
    let p = Vector3::new(point.x, point.y, 1.0);
    let l = match side {
        LineImage::Second => f * p,
        LineImage::First => f.tr_mul(&p),
    };
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n <= 1e-12 * f.norm() * p.norm() {
        return Err(EpipolarError::AtEpipole);
    }
    let mut d = Vector2::new(l.y / n, -l.x / n);
    if d.x < 0.0 || (d.x == 0.0 && d.y < 0.0) {
        d = -d;
    }
    // avoid -0.0 leaking into angles
    d.x += 0.0;
    d.y += 0.0;
    Ok(d)
}

/// Scales `F` to Frobenius norm √2, the norm of the canonical rectified matrix.
pub fn normalize_fundamental(f: &Matrix3<f64>) -> Matrix3<f64> {
    let n = f.norm();
    if n > 0.0 { f * (2f64.sqrt() / n) } else { *f }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rectified() -> Matrix3<f64> {
        Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
    }

    #[test]
    fn worked_example_is_one_half() {
        let s = sampson_cost(&rectified(), Vector2::new(10.0, 5.0), Vector2::new(14.0, 6.0), 1.0);
        assert_eq!(s.cost, 0.5);
        assert!(!s.degenerate);
    }

    #[test]
    fn on_line_and_zero_weight() {
        let f = rectified();
        let s = sampson_cost(&f, Vector2::new(3.0, 7.0), Vector2::new(40.0, 7.0), 1.0);
        assert_eq!(s.cost, 0.0);
        let s = sampson_cost(&f, Vector2::new(3.0, 7.0), Vector2::new(40.0, 9.0), 0.0);
        assert_eq!(s.cost, 0.0);
    }

    #[test]
    fn degenerate_denominator_is_flagged() {
        let s = sampson_cost(&Matrix3::zeros(), Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0), 1.0);
        assert_eq!(s, Sampson { cost: 0.0, degenerate: true });
    }

    #[test]
    fn rectified_direction_is_horizontal() {
        let f = rectified();
        for p in [Vector2::new(10.0, 5.0), Vector2::new(-3.0, 100.0)] {
            let d = epipolar_direction(&f, p, LineImage::Second).unwrap();
            assert_eq!(d, Vector2::new(1.0, 0.0));
            let d = epipolar_direction(&f, p, LineImage::First).unwrap();
            assert_eq!(d, Vector2::new(1.0, 0.0));
        }
    }

    #[test]
    fn direction_is_unit_and_epipole_fails() {
        let f = Matrix3::new(1e-6, 2e-5, -3e-3, -1e-5, 4e-6, 2e-2, 5e-3, -2e-2, 1.0);
        let d = epipolar_direction(&f, Vector2::new(30.0, 40.0), LineImage::Second).unwrap();
        assert!((d.norm() - 1.0).abs() < 1e-12);
        assert!(d.x >= 0.0);
        // the right null vector of F is the epipole in image 1
        let svd = f.svd(true, true);
        let v = svd.v_t.unwrap().row(2).transpose();
        let e = Vector2::new(v.x / v.z, v.y / v.z);
        // rank-2 projection so that F e = 0 holds exactly up to roundoff
        let mut s = svd.singular_values;
        s[2] = 0.0;
        let f2 = svd.u.unwrap() * Matrix3::from_diagonal(&s) * svd.v_t.unwrap();
        assert_eq!(epipolar_direction(&f2, e, LineImage::Second), Err(EpipolarError::AtEpipole));
    }
}
