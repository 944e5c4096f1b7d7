use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("i/o error reading calibration: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration schema violation: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("frame {frame}: {reason}")]
    Invalid { frame: usize, reason: String },
    #[error("calibration has {found} frames, expected {expected}")]
    FrameCount { expected: usize, found: usize },
}

/// Pinhole camera with intrinsics `K` and pose `[R | t]` (world to camera).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraCalib {
    pub k: Matrix3<f64>,
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl CameraCalib {
    pub fn new(k: Matrix3<f64>, r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self, String> {
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err("K is not upper-triangular".into());
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err("K is non-invertible or has a non-positive diagonal".into());
        }
        if (r.transpose() * r - Matrix3::identity()).abs().max() > 1e-6 {
            return Err("R is not orthonormal".into());
        }
        if (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(format!("det(R) = {:.6}, expected +1", r.determinant()));
        }
        if !k.iter().chain(r.iter()).chain(t.iter()).all(|v| v.is_finite()) {
            return Err("non-finite calibration entry".into());
        }
        Ok(Self { k, r, t })
    }

    /// `P = K [R | t]`.
    pub fn projection(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        rt.set_column(3, &self.t);
        self.k * rt
    }

    /// Camera centre in world coordinates.
    pub fn centre(&self) -> Vector3<f64> {
        -self.r.transpose() * self.t
    }

    /// World point to camera coordinates.
    pub fn to_camera(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.r * x + self.t
    }

    /// Pixel projection of a world point; `None` behind the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<nalgebra::Vector2<f64>> {
        let c = self.to_camera(x);
        if c.z <= 0.0 {
            return None;
        }
        let h = self.k * c;
        Some(nalgebra::Vector2::new(h.x / h.z, h.y / h.z))
    }
}

/// Calibration of both views at one time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StereoRigFrame {
    pub cam1: CameraCalib,
    pub cam2: CameraCalib,
    /// Maps view-1 points to view-2 epipolar lines: `x₂ᵀ F x₁ = 0`.
    pub f: Matrix3<f64>,
}

impl StereoRigFrame {
    pub fn from_cameras(cam1: CameraCalib, cam2: CameraCalib) -> Self {
        let f = fundamental_from_projections(&cam1.projection(), &cam2.projection());
        Self { cam1, cam2, f }
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `F = [e₂]ₓ P₂ P₁⁺`, with `e₂ = P₂ C₁` and `C₁` the null vector of `P₁`.
/// The result is scaled to unit Frobenius norm.
pub fn fundamental_from_projections(p1: &Matrix3x4<f64>, p2: &Matrix3x4<f64>) -> Matrix3<f64> {
    // null vector of P1 via the 4x4 padded SVD
    let mut a = nalgebra::Matrix4::zeros();
    a.fixed_view_mut::<3, 4>(0, 0).copy_from(p1);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let imin = svd.singular_values.imin();
    let c1: Vector4<f64> = v_t.row(imin).transpose();
    let e2 = p2 * c1;
    let p1_pinv = p1.transpose() * (p1 * p1.transpose()).try_inverse().expect("P1 has full row rank");
    let f = skew(&e2) * p2 * p1_pinv;
    f / f.norm()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CameraJson {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "R")]
    r: [f64; 9],
    t: [f64; 3],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameJson {
    cam1: CameraJson,
    cam2: CameraJson,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    f: Option<[f64; 9]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationJson {
    frames: Vec<FrameJson>,
}

fn camera_from_json(c: &CameraJson) -> Result<CameraCalib, String> {
    CameraCalib::new(
        Matrix3::from_row_slice(&c.k),
        Matrix3::from_row_slice(&c.r),
        Vector3::from_row_slice(&c.t),
    )
}

fn camera_to_json(c: &CameraCalib) -> CameraJson {
    let row = |m: &Matrix3<f64>| {
        let mut out = [0.0; 9];
        for r in 0..3 {
            for col in 0..3 {
                out[r * 3 + col] = m[(r, col)];
            }
        }
        out
    };
    CameraJson { k: row(&c.k), r: row(&c.r), t: [c.t.x, c.t.y, c.t.z] }
}

/// Parses a calibration document. `F` is derived from the projections when absent.
/// With `expected_frames`, a different frame count is rejected.
pub fn parse_calibration(text: &str, expected_frames: Option<usize>) -> Result<Vec<StereoRigFrame>, CalibError> {
    let doc: CalibrationJson = serde_json::from_str(text)?;
    if let Some(n) = expected_frames {
        if doc.frames.len() != n {
            return Err(CalibError::FrameCount { expected: n, found: doc.frames.len() });
        }
    }
    doc.frames
        .iter()
        .enumerate()
        .map(|(i, fr)| {
            let invalid = |reason: String| CalibError::Invalid { frame: i, reason };
            let cam1 = camera_from_json(&fr.cam1).map_err(|e| invalid(format!("cam1: {e}")))?;
            let cam2 = camera_from_json(&fr.cam2).map_err(|e| invalid(format!("cam2: {e}")))?;
            match fr.f {
                Some(f) => {
                    let f = Matrix3::from_row_slice(&f);
                    if !f.iter().all(|v| v.is_finite()) || f.norm() == 0.0 {
                        return Err(invalid("F is zero or non-finite".into()));
                    }
                    Ok(StereoRigFrame { cam1, cam2, f })
                }
                None => Ok(StereoRigFrame::from_cameras(cam1, cam2)),
            }
        })
        .collect()
}

pub fn load_calibration(path: impl AsRef<Path>, expected_frames: Option<usize>) -> Result<Vec<StereoRigFrame>, CalibError> {
    parse_calibration(&std::fs::read_to_string(path)?, expected_frames)
}

/// Writes frames in the calibration schema, always including `F`.
pub fn save_calibration(path: impl AsRef<Path>, frames: &[StereoRigFrame]) -> Result<(), CalibError> {
    let doc = CalibrationJson {
        frames: frames
            .iter()
            .map(|fr| FrameJson {
                cam1: camera_to_json(&fr.cam1),
                cam2: camera_to_json(&fr.cam2),
                f: Some(camera_to_json(&CameraCalib { k: fr.f, r: Matrix3::identity(), t: Vector3::zeros() }).k),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    Ok(())
}
