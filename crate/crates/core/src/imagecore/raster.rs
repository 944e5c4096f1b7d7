use super::ImageError;

/// Values with a component magnitude above this mark a flow pixel as unknown.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;
/// Sentinel written for unknown flow pixels.
pub const UNKNOWN_FLOW: f32 = 1e10;

/// Row-major interleaved `f32` image with 1 to 3 channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::BadDimensions { width: width as i64, height: height as i64 });
        }
        if !(1..=3).contains(&channels) {
            return Err(ImageError::ChannelCount(channels));
        }
        if data.len() != width * height * channels {
            return Err(ImageError::Truncated {
                expected: width * height * channels,
                found: data.len(),
            });
        }
        Ok(Self { width, height, channels, data })
    }

    /// Panics on zero dimensions or an unsupported channel count.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid raster dimensions")
    }

    /// Builds a raster by evaluating `f(x, y, out)` for every pixel.
    pub fn from_fn<F>(width: usize, height: usize, channels: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize, &mut [f32]),
    {
        let mut r = Self::zeros(width, height, channels);
        for y in 0..height {
            for x in 0..width {
                let i = (y * width + x) * channels;
                f(x, y, &mut r.data[i..i + channels]);
            }
        }
        r
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Bilinear sample of channel `c`; coordinates are clamped to the image.
    #[inline]
    pub fn sample_channel(&self, x: f64, y: f64, c: usize) -> f32 {
        let (x0, x1, fx) = split_coord(x, self.width);
        let (y0, y1, fy) = split_coord(y, self.height);
        let w = self.width;
        let ch = self.channels;
        let d = &self.data;
        let a = d[(y0 * w + x0) * ch + c] as f64;
        let b = d[(y0 * w + x1) * ch + c] as f64;
        let cc = d[(y1 * w + x0) * ch + c] as f64;
        let dd = d[(y1 * w + x1) * ch + c] as f64;
        let top = a + (b - a) * fx;
        let bottom = cc + (dd - cc) * fx;
        (top + (bottom - top) * fy) as f32
    }

    /// Bilinear sample of all channels into `out`.
    pub fn sample_into(&self, x: f64, y: f64, out: &mut [f32]) {
        let (x0, x1, fx) = split_coord(x, self.width);
        let (y0, y1, fy) = split_coord(y, self.height);
        let w = self.width;
        let ch = self.channels;
        for (c, o) in out.iter_mut().enumerate().take(ch) {
            let a = self.data[(y0 * w + x0) * ch + c] as f64;
            let b = self.data[(y0 * w + x1) * ch + c] as f64;
            let cc = self.data[(y1 * w + x0) * ch + c] as f64;
            let dd = self.data[(y1 * w + x1) * ch + c] as f64;
            let top = a + (b - a) * fx;
            let bottom = cc + (dd - cc) * fx;
            *o = (top + (bottom - top) * fy) as f32;
        }
    }

    /// Bilinear interpolation of the four pixels enclosing `(x, y)`.
    pub fn bilinear_sample(&self, x: f64, y: f64) -> Vec<f32> {
        let mut out = vec![0.0; self.channels];
        self.sample_into(x, y, &mut out);
        out
    }

    /// Area-average pooling over `factor`×`factor` blocks; trailing rows and
    /// columns that do not fill a block are dropped.
    pub fn downsample(&self, factor: usize) -> Result<Raster, ImageError> {
        if factor < 1 {
            return Err(ImageError::BadFactor(factor));
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let w = self.width / factor;
        let h = self.height / factor;
        if w == 0 || h == 0 {
            return Err(ImageError::BadDimensions { width: w as i64, height: h as i64 });
        }
        let ch = self.channels;
        let norm = 1.0 / (factor * factor) as f64;
        let mut acc = vec![0.0f64; ch];
        Ok(Raster::from_fn(w, h, ch, |x, y, out| {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for sy in y * factor..(y + 1) * factor {
                for sx in x * factor..(x + 1) * factor {
                    for (a, v) in acc.iter_mut().zip(self.pixel(sx, sy)) {
                        *a += *v as f64;
                    }
                }
            }
            for (o, a) in out.iter_mut().zip(&acc) {
                *o = (a * norm) as f32;
            }
        }))
    }

    /// Rec. 601 luma of an RGB raster; single-channel rasters are returned unchanged.
    pub fn to_luma(&self) -> Raster {
        match self.channels {
            3 => Raster::from_fn(self.width, self.height, 1, |x, y, out| {
                let p = self.pixel(x, y);
                out[0] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            }),
            _ => Raster::from_fn(self.width, self.height, 1, |x, y, out| out[0] = self.get(x, y, 0)),
        }
    }

    /// Replicates a single channel to RGB; RGB rasters are returned unchanged.
    pub fn to_rgb(&self) -> Raster {
        match self.channels {
            3 => self.clone(),
            _ => Raster::from_fn(self.width, self.height, 3, |x, y, out| {
                out.fill(self.get(x, y, 0));
            }),
        }
    }
}

#[inline]
fn split_coord(v: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max) };
    let i0 = v.floor() as usize;
    let i0 = i0.min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, v - i0 as f64)
}

/// Per-pixel 2-vector field in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField(Raster);

impl FlowField {
    pub fn from_raster(r: Raster) -> Result<Self, ImageError> {
        if r.channels() != 2 {
            return Err(ImageError::ChannelCount(r.channels()));
        }
        Ok(Self(r))
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self(Raster::zeros(width, height, 2))
    }

    pub fn constant(width: usize, height: usize, u: f32, v: f32) -> Self {
        Self::from_fn(width, height, |_, _| [u, v])
    }

    pub fn from_fn<F>(width: usize, height: usize, mut f: F) -> Self
    where
        F: FnMut(usize, usize) -> [f32; 2],
    {
        Self(Raster::from_fn(width, height, 2, |x, y, out| {
            let v = f(x, y);
            out[0] = v[0];
            out[1] = v[1];
        }))
    }

    pub fn width(&self) -> usize {
        self.0.width()
    }

    pub fn height(&self) -> usize {
        self.0.height()
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 2] {
        let p = self.0.pixel(x, y);
        [p[0], p[1]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f32; 2]) {
        let p = self.0.pixel_mut(x, y);
        p[0] = v[0];
        p[1] = v[1];
    }

    pub fn set_invalid(&mut self, x: usize, y: usize) {
        self.set(x, y, [UNKNOWN_FLOW, UNKNOWN_FLOW]);
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        is_valid_flow(self.get(x, y))
    }

    /// Bilinear sample of both components with border clamping.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 2] {
        [self.0.sample_channel(x, y, 0), self.0.sample_channel(x, y, 1)]
    }

    /// Area-average downsampling with flow vectors divided by `factor`.
    /// A block containing any unknown pixel becomes unknown.
    pub fn downsample(&self, factor: usize) -> Result<FlowField, ImageError> {
        let mut pooled = self.0.downsample(factor)?;
        let s = 1.0 / factor as f32;
        for y in 0..pooled.height() {
            for x in 0..pooled.width() {
                let known = (y * factor..(y + 1) * factor)
                    .all(|sy| (x * factor..(x + 1) * factor).all(|sx| self.is_valid(sx, sy)));
                let p = pooled.pixel_mut(x, y);
                if known {
                    p[0] *= s;
                    p[1] *= s;
                } else {
                    p[0] = UNKNOWN_FLOW;
                    p[1] = UNKNOWN_FLOW;
                }
            }
        }
        Ok(FlowField(pooled))
    }

    pub fn valid_count(&self) -> usize {
        (0..self.height())
            .flat_map(|y| (0..self.width()).map(move |x| (x, y)))
            .filter(|&(x, y)| self.is_valid(x, y))
            .count()
    }
}

#[inline]
pub fn is_valid_flow(v: [f32; 2]) -> bool {
    v[0].is_finite() && v[1].is_finite() && v[0].abs() <= UNKNOWN_FLOW_THRESHOLD && v[1].abs() <= UNKNOWN_FLOW_THRESHOLD
}

/// Per-pixel boolean mask; `true` marks an occluded or invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl BitMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, false)
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_fn<F: FnMut(usize, usize) -> bool>(width: usize, height: usize, mut f: F) -> Self {
        let mut m = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(x, y);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Pixel-wise OR of two masks of equal size.
    pub fn union(&self, other: &BitMask) -> BitMask {
        assert_eq!((self.width, self.height), (other.width, other.height));
        BitMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }
}
