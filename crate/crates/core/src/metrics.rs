//! Error measures for stereo, scene and 2D flow, and per-frame reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imagecore::{BitMask, FlowField, Raster};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("inputs differ in size")]
    DimensionMismatch,
    #[error("no pixel to evaluate")]
    Empty,
    #[error("io error at {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-pixel `(u, v, d, p)`: view-1 optical flow, disparity `‖u2‖` and
/// disparity change `‖u2 + u3‖ − ‖u2‖`. Non-finite where any input is unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowTuples {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 4]>,
}

impl SceneFlowTuples {
    pub fn from_flows(u1: &FlowField, u2: &FlowField, u3: &FlowField) -> Result<Self, MetricsError> {
        let (w, h) = (u1.width(), u1.height());
        if [u2, u3].iter().any(|f| (f.width(), f.height()) != (w, h)) {
            return Err(MetricsError::DimensionMismatch);
        }
        let data = (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                if !(u1.is_valid(x, y) && u2.is_valid(x, y) && u3.is_valid(x, y)) {
                    return [f64::NAN; 4];
                }
                let [a, b] = u1.get(x, y).map(f64::from);
                let s = u2.get(x, y).map(f64::from);
                let c = u3.get(x, y).map(f64::from);
                let d = s[0].hypot(s[1]);
                [a, b, d, (s[0] + c[0]).hypot(s[1] + c[1]) - d]
            })
            .collect();
        Ok(Self { width: w, height: h, data })
    }
}

/// Indices evaluated: inside the image, not excluded, finite on both sides.
fn evaluated<'a>(n: usize, exclude: Option<&'a BitMask>, ok: impl Fn(usize) -> bool + 'a) -> impl Iterator<Item = usize> + 'a {
    (0..n).filter(move |&i| !exclude.is_some_and(|m| m.data()[i]) && ok(i))
}

fn check_mask(m: Option<&BitMask>, w: usize, h: usize) -> Result<(), MetricsError> {
    if m.is_some_and(|m| (m.width(), m.height()) != (w, h)) {
        return Err(MetricsError::DimensionMismatch);
    }
    Ok(())
}

fn mean(it: impl Iterator<Item = f64>) -> Result<f64, MetricsError> {
    let (mut s, mut n) = (0.0, 0usize);
    for v in it {
        s += v;
        n += 1;
    }
    if n == 0 { Err(MetricsError::Empty) } else { Ok(s / n as f64) }
}

/// Mean of `|‖u2‖ − d̃|` over pixels not marked in `occluded`.
pub fn mae_disparity(u2: &FlowField, gt_d: &Raster, occluded: Option<&BitMask>) -> Result<f64, MetricsError> {
    let (w, h) = (u2.width(), u2.height());
    if (gt_d.width(), gt_d.height()) != (w, h) || gt_d.channels() != 1 {
        return Err(MetricsError::DimensionMismatch);
    }
    check_mask(occluded, w, h)?;
    let g = gt_d.data();
    mean(
        evaluated(w * h, occluded, |i| u2.is_valid(i % w, i / w) && g[i].is_finite())
            .map(|i| {
                let [a, b] = u2.get(i % w, i / w).map(f64::from);
                (a.hypot(b) - g[i] as f64).abs()
            }),
    )
}

fn tuple_pairs<'a>(est: &'a SceneFlowTuples, gt: &'a SceneFlowTuples, occluded: Option<&'a BitMask>) -> Result<impl Iterator<Item = ([f64; 4], [f64; 4])> + 'a, MetricsError> {
    if (est.width, est.height) != (gt.width, gt.height) {
        return Err(MetricsError::DimensionMismatch);
    }
    check_mask(occluded, est.width, est.height)?;
    let fin = |v: &[f64; 4]| v.iter().all(|c| c.is_finite());
    Ok(evaluated(est.data.len(), occluded, move |i| fin(&est.data[i]) && fin(&gt.data[i])).map(move |i| (est.data[i], gt.data[i])))
}

/// `√(mean ‖(u, v, d, p) − (ũ, ṽ, d̃, p̃)‖²)`.
pub fn rmse_sceneflow(est: &SceneFlowTuples, gt: &SceneFlowTuples, occluded: Option<&BitMask>) -> Result<f64, MetricsError> {
    let m = mean(tuple_pairs(est, gt, occluded)?.map(|(a, b)| (0..4).map(|k| (a[k] - b[k]).powi(2)).sum()))?;
    Ok(m.sqrt())
}

/// Angle in degrees between `a` and `b` with the dot/norm ratio clamped to [−1, 1].
pub fn angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    (dot / (na * nb).sqrt()).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Mean angle between `(u, v, p, 1)` and `(ũ, ṽ, p̃, 1)`, degrees.
pub fn aae_sceneflow(est: &SceneFlowTuples, gt: &SceneFlowTuples, occluded: Option<&BitMask>) -> Result<f64, MetricsError> {
    mean(tuple_pairs(est, gt, occluded)?.map(|(a, b)| angle_deg(&[a[0], a[1], a[3], 1.0], &[b[0], b[1], b[3], 1.0])))
}

/// `(MEE, AAE_2D)`; with `only` given, just the marked pixels are evaluated.
pub fn flow2d_errors(est: &FlowField, gt: &FlowField, only: Option<&BitMask>) -> Result<(f64, f64), MetricsError> {
    let (w, h) = (est.width(), est.height());
    if (gt.width(), gt.height()) != (w, h) {
        return Err(MetricsError::DimensionMismatch);
    }
    check_mask(only, w, h)?;
    let idx: Vec<usize> = (0..w * h)
        .filter(|&i| only.is_none_or(|m| m.data()[i]) && est.is_valid(i % w, i / w) && gt.is_valid(i % w, i / w))
        .collect();
    let pair = |i: usize| (est.get(i % w, i / w).map(f64::from), gt.get(i % w, i / w).map(f64::from));
    let mee = mean(idx.iter().map(|&i| {
        let (a, b) = pair(i);
        (a[0] - b[0]).hypot(a[1] - b[1])
    }))?;
    let aae = mean(idx.iter().map(|&i| {
        let (a, b) = pair(i);
        angle_deg(&[a[0], a[1], 1.0], &[b[0], b[1], 1.0])
    }))?;
    Ok((mee, aae))
}

/// Pipeline stage whose stereo flow is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Matcher,
    Filled,
    Refined,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Matcher, Stage::Filled, Stage::Refined];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Matcher => "matcher",
            Stage::Filled => "filled",
            Stage::Refined => "refined",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub frame: usize,
    pub mae_d_matcher: Option<f64>,
    pub mae_d_filled: Option<f64>,
    pub mae_d_refined: Option<f64>,
    /// Scene-flow errors and stereo 2D errors of the last available stage.
    pub rmse: Option<f64>,
    pub aae: Option<f64>,
    pub mee: Option<f64>,
    pub aae_2d: Option<f64>,
    pub pixels: usize,
}

impl FrameReport {
    pub fn mae_d(&self, s: Stage) -> Option<f64> {
        match s {
            Stage::Matcher => self.mae_d_matcher,
            Stage::Filled => self.mae_d_filled,
            Stage::Refined => self.mae_d_refined,
        }
    }

    pub fn set_mae_d(&mut self, s: Stage, v: f64) {
        match s {
            Stage::Matcher => self.mae_d_matcher = Some(v),
            Stage::Filled => self.mae_d_filled = Some(v),
            Stage::Refined => self.mae_d_refined = Some(v),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: Vec<FrameReport>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

impl EvalReport {
    /// Stages with a value in at least one frame.
    pub fn stages(&self) -> Vec<Stage> {
        Stage::ALL.into_iter().filter(|&s| self.frames.iter().any(|f| f.mae_d(s).is_some())).collect()
    }

    /// `frame, mae_d_<stage>..., rmse, aae, mee, aae_2d, pixels`.
    pub fn to_csv(&self) -> String {
        let stages = self.stages();
        let mut out = String::from("frame");
        for s in &stages {
            out.push_str(&format!(",mae_d_{}", s.name()));
        }
        out.push_str(",rmse,aae,mee,aae_2d,pixels\n");
        for f in &self.frames {
            out.push_str(&f.frame.to_string());
            for &s in &stages {
                out.push(',');
                out.push_str(&fmt_opt(f.mae_d(s)));
            }
            let tail = [f.rmse, f.aae, f.mee, f.aae_2d].map(fmt_opt).join(",");
            out.push_str(&format!(",{tail},{}\n", f.pixels));
        }
        out
    }

    pub fn write(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<(), MetricsError> {
        fn io(p: &Path) -> impl FnOnce(std::io::Error) -> MetricsError + '_ {
            move |e| MetricsError::Io { path: p.display().to_string(), source: e }
        }
        let (jp, cp) = (json_path.as_ref(), csv_path.as_ref());
        let mut f = std::fs::File::create(jp).map_err(io(jp))?;
        f.write_all(serde_json::to_string_pretty(self)?.as_bytes()).map_err(io(jp))?;
        std::fs::write(cp, self.to_csv()).map_err(io(cp))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tuples(v: Vec<[f64; 4]>) -> SceneFlowTuples {
        SceneFlowTuples { width: v.len(), height: 1, data: v }
    }

    #[test]
    fn mae_examples() {
        let u2 = FlowField::from_fn(4, 2, |x, _| [-(x as f32), 0.0]);
        let gt = Raster::from_fn(4, 2, 1, |x, _, o| o[0] = x as f32);
        assert_eq!(mae_disparity(&u2, &gt, None).unwrap(), 0.0);
        let off = Raster::from_fn(4, 2, 1, |x, _, o| o[0] = x as f32 + 1.0);
        assert_eq!(mae_disparity(&u2, &off, None).unwrap(), 1.0);
        let half = Raster::from_fn(4, 2, 1, |x, y, o| o[0] = x as f32 + if y == 0 { 2.0 } else { 0.0 });
        assert_eq!(mae_disparity(&u2, &half, None).unwrap(), 1.0);
        let all = BitMask::filled(4, 2, true);
        assert!(matches!(mae_disparity(&u2, &gt, Some(&all)), Err(MetricsError::Empty)));
    }

    #[test]
    fn rmse_and_aae_examples() {
        let gt = tuples(vec![[0.0; 4]]);
        let est = tuples(vec![[1.0; 4]]);
        assert_relative_eq!(rmse_sceneflow(&est, &gt, None).unwrap(), 2.0);
        assert_eq!(rmse_sceneflow(&gt, &gt, None).unwrap(), 0.0);
        let a = tuples(vec![[1.0, 0.0, 3.0, 0.0]]);
        let b = tuples(vec![[0.0, 1.0, 3.0, 0.0]]);
        assert_relative_eq!(aae_sceneflow(&a, &b, None).unwrap(), 60.0, epsilon = 1e-9);
        assert_eq!(aae_sceneflow(&a, &a, None).unwrap(), 0.0);
    }

    #[test]
    fn tuples_from_flows() {
        let u1 = FlowField::constant(2, 1, 1.0, 2.0);
        let u2 = FlowField::constant(2, 1, 3.0, 4.0);
        let u3 = FlowField::constant(2, 1, 3.0, 4.0);
        let t = SceneFlowTuples::from_flows(&u1, &u2, &u3).unwrap();
        assert_eq!(t.data[0], [1.0, 2.0, 5.0, 5.0]);
    }

    #[test]
    fn flow2d_examples() {
        let gt = FlowField::zeros(3, 3);
        let est = FlowField::constant(3, 3, 1.0, 0.0);
        let (mee, aae) = flow2d_errors(&est, &gt, None).unwrap();
        assert_relative_eq!(mee, 1.0);
        assert_relative_eq!(aae, 45.0, epsilon = 1e-9);
        assert_eq!(flow2d_errors(&gt, &gt, None).unwrap(), (0.0, 0.0));
        let mut partial = gt.clone();
        partial.set(1, 1, [3.0, 4.0]);
        let only = BitMask::from_fn(3, 3, |x, y| x == 1 && y == 1);
        assert_relative_eq!(flow2d_errors(&partial, &gt, Some(&only)).unwrap().0, 5.0);
    }

    #[test]
    fn csv_has_columns_for_present_stages() {
        let mut r = EvalReport::default();
        for frame in 0..3 {
            let mut f = FrameReport { frame, pixels: 10, ..Default::default() };
            f.set_mae_d(Stage::Matcher, 1.0);
            f.set_mae_d(Stage::Refined, 0.5);
            r.frames.push(f);
        }
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,mae_d_matcher,mae_d_refined,rmse,aae,mee,aae_2d,pixels");
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "0,1,0.5,,,,,10");
    }

    proptest! {
        #[test]
        fn angle_is_finite_and_zero_on_equal(a in prop::array::uniform3(-1e3f64..1e3), t in -1e-9f64..1e-9) {
            let b = [a[0] * (1.0 + t), a[1], a[2] + 1.0];
            let a1 = [a[0], a[1], a[2] + 1.0];
            prop_assert!(angle_deg(&a1, &b).is_finite());
            prop_assert_eq!(angle_deg(&a1, &a1), 0.0);
        }

        #[test]
        fn rmse_bounds_mean_error_and_is_homogeneous(v in prop::collection::vec(prop::array::uniform4(-5.0f64..5.0), 1..40), c in 0.1f64..10.0) {
            let gt = tuples(vec![[0.0; 4]; v.len()]);
            let est = tuples(v.clone());
            let rmse = rmse_sceneflow(&est, &gt, None).unwrap();
            let mean_norm = v.iter().map(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt()).sum::<f64>() / v.len() as f64;
            prop_assert!(rmse >= mean_norm - 1e-12);
            let scaled = tuples(v.iter().map(|e| e.map(|x| x * c)).collect());
            prop_assert!((rmse_sceneflow(&scaled, &gt, None).unwrap() - c * rmse).abs() < 1e-9 * (1.0 + c * rmse));
            let mut rev = v.clone();
            rev.reverse();
            prop_assert!((rmse_sceneflow(&tuples(rev), &gt, None).unwrap() - rmse).abs() < 1e-12);
        }
    }
}
