//! Camera calibration, epipolar algebra and two-view triangulation.

mod calib;
mod epipolar;
mod triangulate;

pub use calib::{
    fundamental_from_projections, load_calibration, parse_calibration, save_calibration, CalibError, CameraCalib,
    StereoRigFrame,
};
pub use epipolar::{epipolar_direction, normalize_fundamental, sampson_cost, EpipolarError, LineImage, Sampson};
pub use triangulate::{triangulate_dlt, TriangulationError};

pub use nalgebra::{Matrix3, Matrix3x4, Vector2, Vector3, Vector4};
