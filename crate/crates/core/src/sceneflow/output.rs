use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use super::{FourFrameFlows, SceneFlowError};
use crate::geometry::{triangulate_dlt, StereoRigFrame};
use crate::imagecore::{write_pfm, BitMask, FlowField, ImageError, Raster};

/// Seeds the loop-closure field: `u3(x) = flow2(x + u2(x)) − u1(x)`, where
/// `flow2` is the view-2 optical flow. Unknown where `x + u2(x)` leaves the image.
pub fn init_u3(u1: &FlowField, u2: &FlowField, flow2: &FlowField) -> FlowField {
    let (w, h) = (u1.width(), u1.height());
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            if !u1.is_valid(x, y) || !u2.is_valid(x, y) {
                out.set_invalid(x, y);
                continue;
            }
            let [su, sv] = u2.get(x, y);
            let (tx, ty) = (x as f64 + su as f64, y as f64 + sv as f64);
            if tx < 0.0 || ty < 0.0 || tx > (flow2.width() - 1) as f64 || ty > (flow2.height() - 1) as f64 {
                out.set_invalid(x, y);
                continue;
            }
            let f2 = flow2.sample(tx, ty);
            let [a, b] = u1.get(x, y);
            out.set(x, y, [f2[0] - a, f2[1] - b]);
        }
    }
    out
}

/// Per view-1 pixel 3D position at t and motion to t+1.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFlowOutput {
    pub width: usize,
    pub height: usize,
    pub position: Vec<[f64; 3]>,
    pub motion: Vec<[f64; 3]>,
    pub valid: Vec<bool>,
    /// Camera-1 depth of the point at t; 0 where invalid.
    pub depth: Raster,
}

impl SceneFlowOutput {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Triangulates view-1 pixels at t (with `u2`) and t+1 (with `u1`, `u2 + u3`)
/// and takes the difference. Occluded, unknown-flow and degenerate pixels are invalid.
pub fn triangulate_scene_flow(
    flows: &FourFrameFlows,
    rig_t: &StereoRigFrame,
    rig_t1: &StereoRigFrame,
    occlusion: Option<&BitMask>,
) -> SceneFlowOutput {
    let (w, h) = (flows.width(), flows.height());
    let (p1t, p2t) = (rig_t.cam1.projection(), rig_t.cam2.projection());
    let (p1n, p2n) = (rig_t1.cam1.projection(), rig_t1.cam2.projection());
    let n = w * h;
    let mut out = SceneFlowOutput {
        width: w,
        height: h,
        position: vec![[0.0; 3]; n],
        motion: vec![[0.0; 3]; n],
        valid: vec![false; n],
        depth: Raster::zeros(w, h, 1),
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if occlusion.is_some_and(|m| m.get(x, y)) || ![&flows.u1, &flows.u2, &flows.u3].iter().all(|f| f.is_valid(x, y)) {
                continue;
            }
            let g = |f: &FlowField| {
                let v = f.get(x, y);
                Vector2::new(v[0] as f64, v[1] as f64)
            };
            let (u1, u2, u3) = (g(&flows.u1), g(&flows.u2), g(&flows.u3));
            let xp = Vector2::new(x as f64, y as f64);
            let (Ok(xt), Ok(xn)) = (triangulate_dlt(&p1t, &p2t, xp, xp + u2), triangulate_dlt(&p1n, &p2n, xp + u1, xp + u1 + u2 + u3)) else {
                continue;
            };
            let z = rig_t.cam1.to_camera(&xt).z;
            if !(z > 0.0) {
                continue;
            }
            let m: Vector3<f64> = xn - xt;
            out.position[i] = [xt.x, xt.y, xt.z];
            out.motion[i] = [m.x, m.y, m.z];
            out.valid[i] = true;
            out.depth.data_mut()[i] = z as f32;
        }
    }
    out
}

/// One PLY vertex: position, motion vector and colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: [f64; 3],
    pub motion: [f64; 3],
    pub colour: [u8; 3],
}

const PLY_PROPS: [&str; 9] = [
    "property double x",
    "property double y",
    "property double z",
    "property double vx",
    "property double vy",
    "property double vz",
    "property uchar red",
    "property uchar green",
    "property uchar blue",
];

/// ASCII PLY of the valid points, coloured from `colours` (view 1 at t, [0, 1]).
pub fn write_ply(path: impl AsRef<Path>, out: &SceneFlowOutput, colours: Option<&Raster>) -> Result<(), SceneFlowError> {
    let path = path.as_ref();
    let io = |e| SceneFlowError::Image(ImageError::io(path, e));
    let mut f = BufWriter::new(std::fs::File::create(path).map_err(io)?);
    let mut text = format!("ply\nformat ascii 1.0\nelement vertex {}\n", out.valid_count());
    for p in PLY_PROPS {
        text.push_str(p);
        text.push('\n');
    }
    text.push_str("end_header\n");
    f.write_all(text.as_bytes()).map_err(io)?;
    for i in 0..out.width * out.height {
        if !out.valid[i] {
            continue;
        }
        let (x, y) = (i % out.width, i / out.width);
        let c: [u8; 3] = match colours {
            Some(img) => {
                let p = img.pixel(x, y);
                std::array::from_fn(|k| (p[k.min(p.len() - 1)].clamp(0.0, 1.0) * 255.0).round() as u8)
            }
            None => [255; 3],
        };
        let (p, m) = (out.position[i], out.motion[i]);
        writeln!(f, "{} {} {} {} {} {} {} {} {}", p[0], p[1], p[2], m[0], m[1], m[2], c[0], c[1], c[2]).map_err(io)?;
    }
    f.flush().map_err(io)
}

/// Reads files written by [`write_ply`].
pub fn read_ply(path: impl AsRef<Path>) -> Result<Vec<PlyVertex>, SceneFlowError> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| SceneFlowError::Image(ImageError::io(path, e)))?;
    let mut lines = BufReader::new(f).lines();
    let mut next = || -> Result<String, SceneFlowError> {
        lines
            .next()
            .ok_or_else(|| SceneFlowError::Ply("unexpected end of file".into()))?
            .map_err(|e| SceneFlowError::Ply(e.to_string()))
    };
    if next()? != "ply" || next()? != "format ascii 1.0" {
        return Err(SceneFlowError::Ply("not an ascii ply file".into()));
    }
    let count: usize = next()?
        .strip_prefix("element vertex ")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| SceneFlowError::Ply("missing vertex count".into()))?;
    for p in PLY_PROPS {
        if next()? != p {
            return Err(SceneFlowError::Ply(format!("expected '{p}'")));
        }
    }
    if next()? != "end_header" {
        return Err(SceneFlowError::Ply("missing end_header".into()));
    }
    let bad = |l: &str| SceneFlowError::Ply(format!("bad vertex line '{l}'"));
    (0..count)
        .map(|_| {
            let l = next()?;
            let tok: Vec<&str> = l.split_whitespace().collect();
            if tok.len() != 9 {
                return Err(bad(&l));
            }
            let fv = |k: usize| tok[k].parse::<f64>().map_err(|_| bad(&l));
            let cv = |k: usize| tok[k].parse::<u8>().map_err(|_| bad(&l));
            Ok(PlyVertex {
                position: [fv(0)?, fv(1)?, fv(2)?],
                motion: [fv(3)?, fv(4)?, fv(5)?],
                colour: [cv(6)?, cv(7)?, cv(8)?],
            })
        })
        .collect()
}

pub fn write_depth_pfm(path: impl AsRef<Path>, out: &SceneFlowOutput) -> Result<(), SceneFlowError> {
    Ok(write_pfm(path, &out.depth)?)
}
