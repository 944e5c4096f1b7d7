//! Ray-cast synthetic stereo sequences with analytic ground truth.
//!
//! A scene is one or two textured planes observed by two independently moving
//! pinhole cameras. Each layer moves by a constant translation per time step;
//! its texture is attached to the layer so correspondences are exact.

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{save_calibration, CalibError, CameraCalib, StereoRigFrame};
use crate::imagecore::{read_image, write_flo, write_mask_pgm, write_pfm, write_png16, BitMask, FlowField, ImageError, Raster};

#[derive(Debug, thiserror::Error)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    BadSpec(String),
    #[error("camera {camera} at step {step} sees layer {layer} edge-on")]
    EdgeOn { camera: usize, step: usize, layer: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TextureSource {
    /// Sum of random sinusoids; one texture unit is roughly one pixel at the
    /// reference depth.
    Procedural { seed: u64 },
    /// Image tiled by mirroring and sampled bilinearly.
    Image { path: PathBuf },
}

/// `z = depth + slope[0]·x + slope[1]·y` in layer coordinates, optionally
/// bounded to `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub depth: f64,
    #[serde(default)]
    pub slope: [f64; 2],
    #[serde(default)]
    pub bounds: Option<[f64; 4]>,
    /// Translation per time step, scene units.
    #[serde(default)]
    pub motion: [f64; 3],
}

/// Pose of one camera at step 0 and its per-step change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub centre: [f64; 3],
    /// Rotation about the y axis, radians (positive turns the camera to its left).
    #[serde(default)]
    pub yaw: f64,
    #[serde(default)]
    pub velocity: [f64; 3],
    #[serde(default)]
    pub yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub a: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Number of time steps (at least 2).
    pub frames: usize,
    pub focal: f64,
    pub texture: TextureSource,
    /// Far layer first.
    pub layers: Vec<Layer>,
    pub cameras: [CameraPath; 2],
    /// Applied to every camera-2 image.
    #[serde(default)]
    pub contamination: Option<Contamination>,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// Fronto-parallel plane at `depth`, rig baseline `baseline` along x.
    pub fn plane(width: usize, height: usize, depth: f64, baseline: f64, seed: u64) -> Self {
        Self {
            width,
            height,
            frames: 2,
            focal: width as f64,
            texture: TextureSource::Procedural { seed },
            layers: vec![Layer { depth, slope: [0.0; 2], bounds: None, motion: [0.0; 3] }],
            cameras: [
                CameraPath { centre: [0.0; 3], yaw: 0.0, velocity: [0.0; 3], yaw_rate: 0.0 },
                CameraPath { centre: [baseline, 0.0, 0.0], yaw: 0.0, velocity: [0.0; 3], yaw_rate: 0.0 },
            ],
            contamination: None,
            noise_sigma: 0.0,
            seed,
        }
    }

    /// Tilted background plus a moving near rectangle in front of it.
    pub fn two_layer(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let far = 10.0 + rng.random_range(0.0..2.0);
        let near = 6.0 + rng.random_range(0.0..1.0);
        let half = near / width as f64 * 0.5;
        let (hw, hh) = (width as f64 * half * rng.random_range(0.45..0.6), height as f64 * half * rng.random_range(0.45..0.6));
        let (cx, cy) = (rng.random_range(-0.15..0.15) * hw, rng.random_range(-0.15..0.15) * hh);
        Self {
            width,
            height,
            frames: 2,
            focal: width as f64,
            texture: TextureSource::Procedural { seed },
            layers: vec![
                Layer { depth: far, slope: [rng.random_range(-0.1..0.1), 0.0], bounds: None, motion: [0.0; 3] },
                Layer {
                    depth: near,
                    slope: [0.0, rng.random_range(-0.05..0.05)],
                    bounds: Some([cx - hw, cy - hh, cx + hw, cy + hh]),
                    motion: [rng.random_range(-0.04..0.04), rng.random_range(-0.03..0.03), rng.random_range(-0.1..0.1)],
                },
            ],
            cameras: [
                CameraPath { centre: [0.0; 3], yaw: 0.0, velocity: [0.02, 0.0, 0.0], yaw_rate: 0.0 },
                CameraPath { centre: [0.5, 0.0, 0.0], yaw: 0.02, velocity: [0.0, 0.01, 0.03], yaw_rate: -0.002 },
            ],
            contamination: None,
            noise_sigma: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |s: &str| Err(SyntheticError::BadSpec(s.into()));
        if self.width < 8 || self.height < 8 {
            return bad("image must be at least 8x8");
        }
        if self.frames < 2 {
            return bad("need at least two time steps");
        }
        if !(self.focal > 0.0) {
            return bad("focal length must be positive");
        }
        if self.layers.is_empty() || self.layers.len() > 2 {
            return bad("one or two layers supported");
        }
        if self.layers.iter().any(|l| !(l.depth > 0.0)) {
            return bad("layer depth must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }
}

/// Continuous RGB texture in [0.1, 0.75].
enum Texture {
    Waves { comps: Vec<[(f64, f64, f64, f64); 3]>, base: [f64; 3], gain: f64 },
    Image(Raster),
}

impl Texture {
    fn procedural(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 14;
        let mut comps = Vec::with_capacity(n);
        let mut power = [0.0; 3];
        for _ in 0..n {
            let mut c = [(0.0, 0.0, 0.0, 0.0); 3];
            for (ch, p) in c.iter_mut().zip(power.iter_mut()) {
                let wavelength: f64 = rng.random_range(6f64.ln()..48f64.ln()).exp();
                let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                let a: f64 = rng.random_range(0.3..1.0);
                *ch = (k * ang.cos(), k * ang.sin(), rng.random_range(0.0..std::f64::consts::TAU), a);
                *p += 0.5 * a * a;
            }
            comps.push(c);
        }
        // unit variance per channel before the squashing map
        for c in comps.iter_mut() {
            for (ch, p) in c.iter_mut().zip(power) {
                ch.3 /= p.sqrt();
            }
        }
        let base = [0.0; 3].map(|_: f64| rng.random_range(-0.3..0.3));
        Self::Waves { comps, base, gain: 0.8 }
    }

    fn at(&self, s: f64, t: f64) -> [f32; 3] {
        match self {
            Texture::Waves { comps, base, gain } => {
                let mut z = *base;
                for c in comps {
                    for (k, &(kx, ky, ph, a)) in c.iter().enumerate() {
                        z[k] += gain * a * (kx * s + ky * t + ph).sin();
                    }
                }
                z.map(|z| (0.1 + 0.65 * 0.5 * (1.0 + z.tanh())) as f32)
            }
            Texture::Image(img) => {
                let mirror = |v: f64, n: usize| {
                    let p = 2.0 * (n - 1) as f64;
                    let m = v.rem_euclid(p);
                    if m > (n - 1) as f64 { p - m } else { m }
                };
                let mut out = [0f32; 3];
                img.sample_into(mirror(s, img.width()), mirror(t, img.height()), &mut out);
                out
            }
        }
    }
}

/// Rendered views and ground truth of a whole sequence.
pub struct SyntheticDataset {
    /// Per time step: camera-1 and camera-2 images.
    pub images: Vec<[Raster; 2]>,
    pub calibration: Vec<StereoRigFrame>,
    /// Per time step.
    pub u2: Vec<FlowField>,
    pub depth: Vec<Raster>,
    /// Camera-1 pixels not visible in camera 2 at the same step.
    pub occ_stereo: Vec<BitMask>,
    /// Per step pair `(t, t+1)`.
    pub u1: Vec<FlowField>,
    pub u3: Vec<FlowField>,
    /// Pixels whose point is hidden or outside any of the other three views.
    pub occ_all: Vec<BitMask>,
}

struct Scene<'s> {
    spec: &'s SyntheticSpec,
    textures: Vec<Texture>,
    scale: f64,
}

struct Hit {
    layer: usize,
    s: f64,
    local: Vector3<f64>,
}

impl<'s> Scene<'s> {
    fn new(spec: &'s SyntheticSpec) -> Result<Self, SyntheticError> {
        let textures = match &spec.texture {
            TextureSource::Procedural { seed } => (0..spec.layers.len() as u64).map(|i| Texture::procedural(seed.wrapping_add(i * 7919))).collect(),
            TextureSource::Image { path } => {
                let img = read_image(path)?.to_rgb();
                (0..spec.layers.len()).map(|_| Texture::Image(img.clone())).collect()
            }
        };
        Ok(Self { spec, textures, scale: spec.layers[0].depth / spec.focal })
    }

    fn camera(&self, cam: usize, step: usize) -> CameraCalib {
        let p = &self.spec.cameras[cam];
        let t = step as f64;
        let centre = Vector3::from(p.centre) + Vector3::from(p.velocity) * t;
        let yaw = p.yaw + p.yaw_rate * t;
        // world-to-camera rotation
        let r = *Rotation3::from_axis_angle(&Vector3::y_axis(), -yaw).matrix();
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        let k = Matrix3::new(self.spec.focal, 0.0, (w - 1.0) / 2.0, 0.0, self.spec.focal, (h - 1.0) / 2.0, 0.0, 0.0, 1.0);
        CameraCalib::new(k, r, -r * centre).expect("valid synthetic camera")
    }

    /// Nearest layer hit along `origin + s·dir`, `s > 0`.
    fn trace(&self, origin: &Vector3<f64>, dir: &Vector3<f64>, step: usize) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for (i, l) in self.spec.layers.iter().enumerate() {
            let q = origin - Vector3::from(l.motion) * step as f64;
            let den = dir.z - l.slope[0] * dir.x - l.slope[1] * dir.y;
            if den.abs() < 1e-12 {
                continue;
            }
            let s = (l.depth + l.slope[0] * q.x + l.slope[1] * q.y - q.z) / den;
            if s <= 1e-9 {
                continue;
            }
            let local = q + dir * s;
            if let Some([x0, y0, x1, y1]) = l.bounds {
                if local.x < x0 || local.x > x1 || local.y < y0 || local.y > y1 {
                    continue;
                }
            }
            if best.as_ref().is_none_or(|b| s < b.s) {
                best = Some(Hit { layer: i, s, local });
            }
        }
        best
    }

    fn ray(cam: &CameraCalib, x: f64, y: f64) -> (Vector3<f64>, Vector3<f64>) {
        let kinv = cam.k.try_inverse().expect("invertible intrinsics");
        let d = cam.r.transpose() * (kinv * Vector3::new(x, y, 1.0));
        (cam.centre(), d)
    }

    fn render(&self, cam: &CameraCalib, step: usize) -> Raster {
        let (w, h) = (self.spec.width, self.spec.height);
        Raster::from_fn(w, h, 3, |x, y, out| out.copy_from_slice(&self.shade(cam, x as f64, y as f64, step)))
    }

    /// Uncontaminated radiance seen through pixel position `(x, y)`.
    fn shade(&self, cam: &CameraCalib, x: f64, y: f64, step: usize) -> [f32; 3] {
        let (o, d) = Self::ray(cam, x, y);
        match self.trace(&o, &d, step) {
            Some(hit) => self.textures[hit.layer].at(hit.local.x / self.scale, hit.local.y / self.scale),
            None => [0.1; 3],
        }
    }

    /// Projection of world point `p` (on `layer`) into `cam`, if visible.
    fn visible(&self, cam: &CameraCalib, p: &Vector3<f64>, layer: usize, step: usize) -> Option<Vector2<f64>> {
        let y = cam.project(p)?;
        let (w, h) = (self.spec.width as f64, self.spec.height as f64);
        if y.x < 0.0 || y.y < 0.0 || y.x > w - 1.0 || y.y > h - 1.0 {
            return None;
        }
        let c = cam.centre();
        let hit = self.trace(&c, &(p - c), step)?;
        (hit.layer == layer && (hit.s - 1.0).abs() < 1e-6).then_some(y)
    }
}

fn contaminate(img: &Raster, c: &Contamination) -> Raster {
    Raster::from_fn(img.width(), img.height(), 3, |x, y, out| {
        let p = img.pixel(x, y);
        for k in 0..3 {
            out[k] = (c.a[k][0] * p[0] as f64 + c.a[k][1] * p[1] as f64 + c.a[k][2] * p[2] as f64 + c.offset[k]) as f32;
        }
    })
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<SyntheticDataset, SyntheticError> {
    spec.validate()?;
    let scene = Scene::new(spec)?;
    let (w, h) = (spec.width, spec.height);
    let cams: Vec<[CameraCalib; 2]> = (0..spec.frames).map(|t| [scene.camera(0, t), scene.camera(1, t)]).collect();
    for (t, pair) in cams.iter().enumerate() {
        for (ci, cam) in pair.iter().enumerate() {
            let axis = cam.r.row(2).transpose();
            for (li, l) in spec.layers.iter().enumerate() {
                let n = Vector3::new(-l.slope[0], -l.slope[1], 1.0).normalize();
                if n.dot(&axis).abs() < 1e-3 {
                    return Err(SyntheticError::EdgeOn { camera: ci + 1, step: t, layer: li });
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| SyntheticError::BadSpec(e.to_string()))?;
    let mut images = Vec::with_capacity(spec.frames);
    for (t, pair) in cams.iter().enumerate() {
        let mut views = [scene.render(&pair[0], t), scene.render(&pair[1], t)];
        if let Some(c) = &spec.contamination {
            views[1] = contaminate(&views[1], c);
        }
        if spec.noise_sigma > 0.0 {
            for v in views.iter_mut() {
                v.data_mut().iter_mut().for_each(|p| *p += normal.sample(&mut rng) as f32);
            }
        }
        images.push(views);
    }

    let mut ds = SyntheticDataset {
        images,
        calibration: cams.iter().map(|c| StereoRigFrame::from_cameras(c[0].clone(), c[1].clone())).collect(),
        u2: Vec::new(),
        depth: Vec::new(),
        occ_stereo: Vec::new(),
        u1: Vec::new(),
        u3: Vec::new(),
        occ_all: Vec::new(),
    };
    for t in 0..spec.frames {
        let [c1, c2] = &cams[t];
        let mut u2 = FlowField::zeros(w, h);
        let mut depth = Raster::zeros(w, h, 1);
        let mut occ = BitMask::new(w, h);
        let next = cams.get(t + 1);
        let mut u1 = FlowField::zeros(w, h);
        let mut u3 = FlowField::zeros(w, h);
        let mut occ_all = BitMask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let xp = Vector2::new(x as f64, y as f64);
                let (o, d) = Scene::ray(c1, x as f64, y as f64);
                let Some(hit) = scene.trace(&o, &d, t) else {
                    u2.set_invalid(x, y);
                    u1.set_invalid(x, y);
                    u3.set_invalid(x, y);
                    occ.set(x, y, true);
                    occ_all.set(x, y, true);
                    continue;
                };
                let p = o + d * hit.s;
                depth.data_mut()[y * w + x] = c1.to_camera(&p).z as f32;
                let b = c2.project(&p).map(|v| v - xp);
                match b {
                    Some(b) => u2.set(x, y, [b.x as f32, b.y as f32]),
                    None => u2.set_invalid(x, y),
                }
                let vis2 = scene.visible(c2, &p, hit.layer, t).is_some();
                occ.set(x, y, !vis2);
                if let Some([n1, n2]) = next {
                    let pn = p + Vector3::from(spec.layers[hit.layer].motion);
                    let (a, c) = (n1.project(&pn), n2.project(&pn));
                    match (a, c, b) {
                        (Some(a), Some(c), Some(b)) => {
                            let (a, c) = (a - xp, c - xp);
                            u1.set(x, y, [a.x as f32, a.y as f32]);
                            let r = c - a - b;
                            u3.set(x, y, [r.x as f32, r.y as f32]);
                        }
                        _ => {
                            u1.set_invalid(x, y);
                            u3.set_invalid(x, y);
                        }
                    }
                    let vis = vis2 && scene.visible(n1, &pn, hit.layer, t + 1).is_some() && scene.visible(n2, &pn, hit.layer, t + 1).is_some();
                    occ_all.set(x, y, !vis);
                }
            }
        }
        ds.u2.push(u2);
        ds.depth.push(depth);
        ds.occ_stereo.push(occ);
        if next.is_some() {
            ds.u1.push(u1);
            ds.u3.push(u3);
            ds.occ_all.push(occ_all);
        }
    }
    Ok(ds)
}

/// File name stem for frame `t`.
pub fn frame_name(t: usize) -> String {
    format!("{t:04}")
}

impl SyntheticDataset {
    /// Writes `cam1/NNNN.png`, `cam2/NNNN.png`, `calibration.json` and the
    /// `gt/` folder (`u1_`, `u2_`, `u3_` flows, `depth_` PFM, `occ_` and
    /// `occall_` PGM masks).
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), SyntheticError> {
        let dir = dir.as_ref();
        for sub in ["cam1", "cam2", "gt"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| SyntheticError::Io { path: p, source: e })?;
        }
        for (t, [a, b]) in self.images.iter().enumerate() {
            let n = frame_name(t);
            write_png16(dir.join("cam1").join(format!("{n}.png")), a)?;
            write_png16(dir.join("cam2").join(format!("{n}.png")), b)?;
            write_flo(dir.join("gt").join(format!("u2_{n}.flo")), &self.u2[t])?;
            write_pfm(dir.join("gt").join(format!("depth_{n}.pfm")), &self.depth[t])?;
            write_mask_pgm(dir.join("gt").join(format!("occ_{n}.pgm")), &self.occ_stereo[t])?;
        }
        for t in 0..self.u1.len() {
            let n = frame_name(t);
            write_flo(dir.join("gt").join(format!("u1_{n}.flo")), &self.u1[t])?;
            write_flo(dir.join("gt").join(format!("u3_{n}.flo")), &self.u3[t])?;
            write_mask_pgm(dir.join("gt").join(format!("occall_{n}.pgm")), &self.occ_all[t])?;
        }
        save_calibration(dir.join("calibration.json"), &self.calibration)?;
        Ok(())
    }
}
