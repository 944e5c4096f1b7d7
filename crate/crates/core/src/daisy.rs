//! Dense DAISY descriptors: half-rectified directional gradients, smoothed at
//! one scale per ring and sampled on a rotated flower-shaped grid.

use std::f64::consts::PI;

use thiserror::Error;

use crate::imagecore::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum DaisyError {
    #[error("descriptor lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid DAISY parameters: {0}")]
    BadParams(&'static str),
    #[error("image must be at least 2x2")]
    ImageTooSmall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Each H-bin histogram scaled to unit L2 norm; all-zero histograms stay zero.
    PerHistogram,
    /// The whole descriptor scaled to unit L2 norm.
    Full,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DaisyParams {
    pub radius: f64,
    pub rings: usize,
    pub points_per_ring: usize,
    pub orientations: usize,
    pub normalization: Normalization,
}

impl DaisyParams {
    /// Small footprint for stereo: two rings of radius 10 px.
    pub fn stereo() -> Self {
        Self { radius: 10.0, rings: 2, points_per_ring: 8, orientations: 8, normalization: Normalization::PerHistogram }
    }

    /// Reference footprint used for optical flow.
    pub fn optical_flow() -> Self {
        Self { radius: 15.0, rings: 3, points_per_ring: 8, orientations: 8, normalization: Normalization::PerHistogram }
    }

    pub fn descriptor_len(&self) -> usize {
        (1 + self.rings * self.points_per_ring) * self.orientations
    }

    pub fn validate(&self) -> Result<(), DaisyError> {
        if !(self.radius > 0.0) {
            return Err(DaisyError::BadParams("radius must be positive"));
        }
        if self.rings == 0 || self.points_per_ring == 0 || self.orientations == 0 {
            return Err(DaisyError::BadParams("rings, points and orientations must be >= 1"));
        }
        Ok(())
    }

    /// Cumulative smoothing of layer `s`: `0.5 · R · s / Q`.
    pub fn layer_sigma(&self, s: usize) -> f64 {
        0.5 * self.radius * s as f64 / self.rings as f64
    }
}

/// `Q + 1` layers of `H` non-negative orientation maps, stored pixel-interleaved.
#[derive(Debug, Clone)]
pub struct OrientationPyramid {
    width: usize,
    height: usize,
    orientations: usize,
    layers: Vec<Vec<f32>>,
}

impl OrientationPyramid {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Orientation map `o` of layer `s` as a single-channel raster.
    pub fn map(&self, s: usize, o: usize) -> Raster {
        let h = self.orientations;
        let layer = &self.layers[s];
        Raster::from_fn(self.width, self.height, 1, |x, y, out| out[0] = layer[(y * self.width + x) * h + o])
    }

    /// Bilinear sample of the H-vector of layer `s` at `(x, y)`, clamped to the image.
    #[inline]
    fn sample_histogram(&self, s: usize, x: f64, y: f64, out: &mut [f32]) {
        let (w, hgt, h) = (self.width, self.height, self.orientations);
        let x = x.clamp(0.0, (w - 1) as f64);
        let y = y.clamp(0.0, (hgt - 1) as f64);
        let x0 = (x.floor() as usize).min(w - 1);
        let y0 = (y.floor() as usize).min(hgt - 1);
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(hgt - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let layer = &self.layers[s];
        let a = &layer[(y0 * w + x0) * h..][..h];
        let b = &layer[(y0 * w + x1) * h..][..h];
        let c = &layer[(y1 * w + x0) * h..][..h];
        let d = &layer[(y1 * w + x1) * h..][..h];
        let (wa, wb, wc, wd) = ((1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy);
        for o in 0..h {
            out[o] = wa * a[o] + wb * b[o] + wc * c[o] + wd * d[o];
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable Gaussian blur of an interleaved `channels`-wide buffer, clamp-to-edge.
pub(crate) fn blur_interleaved(data: &[f32], width: usize, height: usize, channels: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let mut tmp = vec![0.0f32; data.len()];
    for y in 0..height {
        for x in 0..width {
            let dst = &mut tmp[(y * width + x) * channels..][..channels];
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as i64 + i as i64 - r).clamp(0, width as i64 - 1) as usize;
                let src = &data[(y * width + sx) * channels..][..channels];
                for c in 0..channels {
                    dst[c] += kv * src[c];
                }
            }
        }
    }
    let mut out = vec![0.0f32; data.len()];
    for y in 0..height {
        for (i, kv) in k.iter().enumerate() {
            let sy = (y as i64 + i as i64 - r).clamp(0, height as i64 - 1) as usize;
            let src = &tmp[sy * width * channels..][..width * channels];
            let dst = &mut out[y * width * channels..][..width * channels];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Builds the orientation maps: layer 0 holds `max(0, ∂I/∂o)` for `H` equally
/// spaced directions `o`, layer `s` adds smoothing up to [`DaisyParams::layer_sigma`].
pub fn build_orientation_pyramid(image: &Raster, p: &DaisyParams) -> Result<OrientationPyramid, DaisyError> {
    p.validate()?;
    let (w, h) = (image.width(), image.height());
    if w < 2 || h < 2 {
        return Err(DaisyError::ImageTooSmall);
    }
    let luma = image.to_luma();
    let at = |x: i64, y: i64| luma.get(x.clamp(0, w as i64 - 1) as usize, y.clamp(0, h as i64 - 1) as usize, 0);
    let dirs: Vec<(f32, f32)> = (0..p.orientations)
        .map(|o| {
            let a = 2.0 * PI * o as f64 / p.orientations as f64;
            (a.cos() as f32, a.sin() as f32)
        })
        .collect();
    let mut base = vec![0.0f32; w * h * p.orientations];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let gx = 0.5 * (at(x + 1, y) - at(x - 1, y));
            let gy = 0.5 * (at(x, y + 1) - at(x, y - 1));
            let dst = &mut base[(y as usize * w + x as usize) * p.orientations..][..p.orientations];
            for (d, (c, s)) in dst.iter_mut().zip(&dirs) {
                *d = (c * gx + s * gy).max(0.0);
            }
        }
    }
    let mut layers = vec![base];
    for s in 1..=p.rings {
        let prev = p.layer_sigma(s - 1);
        let cur = p.layer_sigma(s);
        let inc = (cur * cur - prev * prev).sqrt();
        let next = blur_interleaved(layers.last().unwrap(), w, h, p.orientations, inc);
        layers.push(next);
    }
    Ok(OrientationPyramid { width: w, height: h, orientations: p.orientations, layers })
}

/// Dense descriptor vector, `(1 + Q·T)·H` long.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub Vec<f32>);

/// Writes the descriptor at `(x, y)` with grid rotation `theta` into `out`.
pub fn descriptor_into(pyr: &OrientationPyramid, x: f64, y: f64, theta: f64, p: &DaisyParams, out: &mut [f32]) {
    let h = p.orientations;
    debug_assert_eq!(out.len(), p.descriptor_len());
    pyr.sample_histogram(0, x, y, &mut out[..h]);
    let mut idx = h;
    for q in 1..=p.rings {
        let r = q as f64 * p.radius / p.rings as f64;
        for t in 0..p.points_per_ring {
            let a = theta + 2.0 * PI * t as f64 / p.points_per_ring as f64;
            pyr.sample_histogram(q, x + r * a.cos(), y + r * a.sin(), &mut out[idx..idx + h]);
            idx += h;
        }
    }
    normalize(out, h, p.normalization);
}

fn normalize(d: &mut [f32], block: usize, mode: Normalization) {
    let scale = |chunk: &mut [f32]| {
        let n = chunk.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > 1e-12 {
            chunk.iter_mut().for_each(|v| *v /= n);
        }
    };
    match mode {
        Normalization::PerHistogram => d.chunks_mut(block).for_each(scale),
        Normalization::Full => scale(d),
        Normalization::None => {}
    }
}

pub fn daisy_descriptor(pyr: &OrientationPyramid, x: f64, y: f64, theta: f64, p: &DaisyParams) -> Descriptor {
    let mut out = vec![0.0; p.descriptor_len()];
    descriptor_into(pyr, x, y, theta, p, &mut out);
    Descriptor(out)
}

/// `w · ‖d1 − d2‖²`.
pub fn descriptor_cost(d1: &[f32], d2: &[f32], weight: f64) -> Result<f64, DaisyError> {
    if d1.len() != d2.len() {
        return Err(DaisyError::LengthMismatch(d1.len(), d2.len()));
    }
    Ok(weight * squared_distance(d1, d2))
}

#[inline]
pub(crate) fn squared_distance(d1: &[f32], d2: &[f32]) -> f64 {
    d1.iter().zip(d2).map(|(a, b)| (a - b) * (a - b)).sum::<f32>() as f64
}

/// Descriptors precomputed at every integer pixel.
#[derive(Debug, Clone)]
pub struct DenseDescriptors {
    width: usize,
    height: usize,
    len: usize,
    data: Vec<f32>,
}

impl DenseDescriptors {
    pub fn compute<F: Fn(usize, usize) -> f64>(pyr: &OrientationPyramid, p: &DaisyParams, theta: F) -> Self {
        let (w, h, len) = (pyr.width(), pyr.height(), p.descriptor_len());
        let mut data = vec![0.0f32; w * h * len];
        for y in 0..h {
            for x in 0..w {
                descriptor_into(pyr, x as f64, y as f64, theta(x, y), p, &mut data[(y * w + x) * len..][..len]);
            }
        }
        Self { width: w, height: h, len, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> &[f32] {
        &self.data[(y * self.width + x) * self.len..][..self.len]
    }

    /// Descriptor at the pixel nearest to `(x, y)`.
    #[inline]
    pub fn nearest(&self, x: f64, y: f64) -> &[f32] {
        let xi = (x.round().max(0.0) as usize).min(self.width - 1);
        let yi = (y.round().max(0.0) as usize).min(self.height - 1);
        self.at(xi, yi)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
