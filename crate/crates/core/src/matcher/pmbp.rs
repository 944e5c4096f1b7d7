use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{colour_cost, epipolar_cost, pairwise_cost, ColourTransform, MatchError, MatchWeights, PassSchedule};
use crate::daisy::{build_orientation_pyramid, descriptor_into, squared_distance, DaisyParams, DenseDescriptors, OrientationPyramid};
use crate::geometry::{epipolar_direction, LineImage};
use crate::imagecore::{FlowField, Raster};

/// Angle of the epipolar line through `p`, used to orient descriptors.
///
/// `in_first` says `p` lies in image 1. The line is found by taking the
/// epipolar line of `p` in the other image, dropping a perpendicular from `p`
/// onto it and mapping that foot back. Returns 0 near an epipole.
pub fn epipolar_angle(f: &Matrix3<f64>, p: [f64; 2], in_first: bool) -> f64 {
    let ph = Vector3::new(p[0], p[1], 1.0);
    let l = if in_first { f * ph } else { f.tr_mul(&ph) };
    let n2 = l.x * l.x + l.y * l.y;
    if !(n2 > 1e-24) {
        return 0.0;
    }
    let s = (l.x * p[0] + l.y * p[1] + l.z) / n2;
    let foot = Vector2::new(p[0] - s * l.x, p[1] - s * l.y);
    let side = if in_first { LineImage::First } else { LineImage::Second };
    match epipolar_direction(f, foot, side) {
        Ok(d) => d.y.atan2(d.x),
        Err(_) => 0.0,
    }
}

/// Images, descriptor pyramids and geometry for one matching direction.
pub struct MatchProblem {
    img1: Raster,
    img2: Raster,
    f: Option<Matrix3<f64>>,
    daisy: DaisyParams,
    desc1: DenseDescriptors,
    pyr2: OrientationPyramid,
    dense2: Option<DenseDescriptors>,
}

impl MatchProblem {
    /// `img1`, `img2` are RGB rasters. `f` maps image-1 points to lines in image 2.
    pub fn new(img1: &Raster, img2: &Raster, f: Option<Matrix3<f64>>, daisy: DaisyParams) -> Result<Self, MatchError> {
        if (img1.width(), img1.height()) != (img2.width(), img2.height()) {
            return Err(MatchError::DimensionMismatch(img1.width(), img1.height(), img2.width(), img2.height()));
        }
        for im in [img1, img2] {
            if im.channels() != 3 {
                return Err(MatchError::NotRgb(im.channels()));
            }
        }
        daisy.validate()?;
        let pyr1 = build_orientation_pyramid(img1, &daisy)?;
        let pyr2 = build_orientation_pyramid(img2, &daisy)?;
        let desc1 = DenseDescriptors::compute(&pyr1, &daisy, |x, y| match &f {
            Some(f) => epipolar_angle(f, [x as f64, y as f64], true),
            None => 0.0,
        });
        Ok(Self { img1: img1.clone(), img2: img2.clone(), f, daisy, desc1, pyr2, dense2: None })
    }

    pub fn width(&self) -> usize {
        self.img1.width()
    }

    pub fn height(&self) -> usize {
        self.img1.height()
    }

    pub fn fundamental(&self) -> Option<&Matrix3<f64>> {
        self.f.as_ref()
    }

    pub fn image1(&self) -> &Raster {
        &self.img1
    }

    pub fn image2(&self) -> &Raster {
        &self.img2
    }

    fn theta2(&self, x: f64, y: f64) -> f64 {
        self.f.as_ref().map_or(0.0, |f| epipolar_angle(f, [x, y], false))
    }

    /// Precomputes image-2 descriptors at every pixel (used by dense passes).
    pub fn ensure_dense_target(&mut self) {
        if self.dense2.is_none() {
            let d = DenseDescriptors::compute(&self.pyr2, &self.daisy, |x, y| self.theta2(x as f64, y as f64));
            self.dense2 = Some(d);
        }
    }

    /// Unary matching cost of sending pixel `(x, y)` along `flow`.
    ///
    /// `dense` selects the nearest-pixel descriptor cache for image 2; it falls
    /// back to on-the-fly evaluation if the cache was never built.
    pub fn unary_cost(
        &self,
        x: usize,
        y: usize,
        flow: [f32; 2],
        t: &ColourTransform,
        w: &MatchWeights,
        dense: bool,
        scratch: &mut Vec<f32>,
    ) -> f64 {
        let tx = x as f64 + flow[0] as f64;
        let ty = y as f64 + flow[1] as f64;
        let d1 = self.desc1.at(x, y);
        let mut cost = 0.0;
        if w.w_d != 0.0 {
            let dist = match (&self.dense2, dense) {
                (Some(d2), true) => squared_distance(d1, d2.nearest(tx, ty)),
                _ => {
                    scratch.resize(self.daisy.descriptor_len(), 0.0);
                    descriptor_into(&self.pyr2, tx, ty, self.theta2(tx, ty), &self.daisy, scratch);
                    squared_distance(d1, scratch)
                }
            };
            cost += w.w_d * dist;
        }
        if w.w_c != 0.0 {
            let p = self.img1.pixel(x, y);
            let mut c2 = [0f32; 3];
            self.img2.sample_into(tx, ty, &mut c2);
            cost += colour_cost([p[0], p[1], p[2]], c2, t, w.w_c);
        }
        cost + epipolar_cost(self.f.as_ref(), [x as f64, y as f64], [tx, ty], w.w_e)
    }
}

/// PMBP tuning that is not part of the pass schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PmbpConfig {
    /// Particles per pixel.
    pub particles: usize,
    /// Half-width of the initial search window and starting random-search radius, in pixels.
    pub search_range: f64,
    pub seed: u64,
}

impl PmbpConfig {
    pub fn validate(&self) -> Result<(), MatchError> {
        if self.particles == 0 {
            return Err(MatchError::BadParams("particles must be at least 1"));
        }
        if !(self.search_range > 0.0) || !self.search_range.is_finite() {
            return Err(MatchError::BadParams("search_range must be positive"));
        }
        Ok(())
    }
}

// left, right, up, down
const OFFSETS: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const OPPOSITE: [usize; 4] = [1, 0, 3, 2];

/// Particles, cached unaries and messages of one PMBP run.
///
/// `inbox[(s·4 + d)·K + k]` is the message sent to pixel `s` by its neighbour in
/// direction `d`, evaluated at particle `k` of `s`. Missing neighbours keep zeros.
pub struct PmbpState {
    width: usize,
    height: usize,
    k: usize,
    search_range: f64,
    labels: Vec<[f32; 2]>,
    unary: Vec<f64>,
    inbox: Vec<f64>,
    rng: ChaCha8Rng,
}

struct PassCtx<'a> {
    problem: &'a MatchProblem,
    t: &'a ColourTransform,
    w: &'a MatchWeights,
    dense: bool,
}

impl PmbpState {
    /// Particle 0 starts at `init` where given and valid; the rest are uniform in
    /// the search window. Targets are clamped into the image.
    pub fn new(problem: &MatchProblem, cfg: &PmbpConfig, init: Option<&FlowField>) -> Result<Self, MatchError> {
        cfg.validate()?;
        let (w, h) = (problem.width(), problem.height());
        if let Some(f) = init {
            if (f.width(), f.height()) != (w, h) {
                return Err(MatchError::PriorSize(f.width(), f.height(), w, h));
            }
        }
        let k = cfg.particles;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let r = cfg.search_range;
        let mut labels = Vec::with_capacity(w * h * k);
        for y in 0..h {
            for x in 0..w {
                for j in 0..k {
                    let l = match init {
                        Some(f) if j == 0 && f.is_valid(x, y) => f.get(x, y),
                        _ => [rng.random_range(-r..=r) as f32, rng.random_range(-r..=r) as f32],
                    };
                    labels.push(clamp_flow(x, y, l, w, h));
                }
            }
        }
        Ok(Self {
            width: w,
            height: h,
            k,
            search_range: r,
            labels,
            unary: vec![0.0; w * h * k],
            inbox: vec![0.0; w * h * 4 * k],
            rng,
        })
    }

    pub fn particles(&self, x: usize, y: usize) -> &[[f32; 2]] {
        let s = y * self.width + x;
        &self.labels[s * self.k..(s + 1) * self.k]
    }

    pub fn cached_unary(&self, x: usize, y: usize) -> &[f64] {
        let s = y * self.width + x;
        &self.unary[s * self.k..(s + 1) * self.k]
    }

    fn neighbour(&self, s: usize, d: usize) -> Option<usize> {
        let (x, y) = ((s % self.width) as i64, (s / self.width) as i64);
        let (nx, ny) = (x + OFFSETS[d].0, y + OFFSETS[d].1);
        if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
            None
        } else {
            Some(ny as usize * self.width + nx as usize)
        }
    }

    /// Unary plus all incoming messages except the one from direction `excl`.
    #[inline]
    fn h_excl(&self, s: usize, j: usize, excl: Option<usize>) -> f64 {
        let base = s * 4 * self.k;
        let mut v = self.unary[s * self.k + j];
        for d in 0..4 {
            if Some(d) != excl {
                v += self.inbox[base + d * self.k + j];
            }
        }
        v
    }

    /// Message from `t` to `s` (t lies in direction `d` from s) evaluated at `label`.
    fn message(&self, t: usize, d: usize, label: [f32; 2], w: &MatchWeights) -> f64 {
        let back = OPPOSITE[d];
        (0..self.k)
            .map(|j| self.h_excl(t, j, Some(back)) + pairwise_cost(self.labels[t * self.k + j], label, w.w_p, w.tau_p))
            .fold(f64::INFINITY, f64::min)
    }

    fn refresh_unaries(&mut self, ctx: &PassCtx) {
        let mut scratch = Vec::new();
        for s in 0..self.width * self.height {
            let (x, y) = (s % self.width, s / self.width);
            for j in 0..self.k {
                let i = s * self.k + j;
                self.unary[i] = ctx.problem.unary_cost(x, y, self.labels[i], ctx.t, ctx.w, ctx.dense, &mut scratch);
            }
        }
    }

    fn belief(&self, s: usize, j: usize) -> f64 {
        self.h_excl(s, j, None)
    }

    fn visit(&mut self, s: usize, ctx: &PassCtx, scratch: &mut Vec<f32>) {
        let k = self.k;
        let (x, y) = (s % self.width, s / self.width);
        let nbrs: Vec<(usize, usize)> = (0..4).filter_map(|d| self.neighbour(s, d).map(|t| (d, t))).collect();
        // fresh incoming messages at the current particles
        for &(d, t) in &nbrs {
            for j in 0..k {
                let m = self.message(t, d, self.labels[s * k + j], ctx.w);
                self.inbox[(s * 4 + d) * k + j] = m;
            }
        }
        let mut beliefs: Vec<f64> = (0..k).map(|j| self.belief(s, j)).collect();

        let mut candidates = Vec::with_capacity(nbrs.len() * k);
        for &(_, t) in &nbrs {
            candidates.extend_from_slice(&self.labels[t * k..(t + 1) * k]);
        }
        for c in candidates {
            self.try_candidate(s, x, y, c, &nbrs, &mut beliefs, ctx, scratch);
        }
        let mut radius = self.search_range;
        while radius >= 0.5 {
            let best = argmin(&beliefs);
            let base = self.labels[s * k + best];
            let rr = radius * self.rng.random::<f64>().sqrt();
            let a = 2.0 * PI * self.rng.random::<f64>();
            let c = [base[0] + (rr * a.cos()) as f32, base[1] + (rr * a.sin()) as f32];
            self.try_candidate(s, x, y, c, &nbrs, &mut beliefs, ctx, scratch);
            radius *= 0.5;
        }

        for &(d, _) in &nbrs {
            let row = &mut self.inbox[(s * 4 + d) * k..(s * 4 + d + 1) * k];
            let m = row.iter().copied().fold(f64::INFINITY, f64::min);
            row.iter_mut().for_each(|v| *v -= m);
        }
        // push outgoing messages
        for &(d, t) in &nbrs {
            let back = OPPOSITE[d];
            let mut out = vec![0.0; k];
            for (jt, o) in out.iter_mut().enumerate() {
                let lt = self.labels[t * k + jt];
                *o = (0..k)
                    .map(|j| self.h_excl(s, j, Some(d)) + pairwise_cost(self.labels[s * k + j], lt, ctx.w.w_p, ctx.w.tau_p))
                    .fold(f64::INFINITY, f64::min);
            }
            let m = out.iter().copied().fold(f64::INFINITY, f64::min);
            for (jt, o) in out.iter().enumerate() {
                self.inbox[(t * 4 + back) * k + jt] = o - m;
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn try_candidate(
        &mut self,
        s: usize,
        x: usize,
        y: usize,
        c: [f32; 2],
        nbrs: &[(usize, usize)],
        beliefs: &mut [f64],
        ctx: &PassCtx,
        scratch: &mut Vec<f32>,
    ) {
        let k = self.k;
        let c = clamp_flow(x, y, c, self.width, self.height);
        if self.labels[s * k..(s + 1) * k].contains(&c) {
            return;
        }
        let u = ctx.problem.unary_cost(x, y, c, ctx.t, ctx.w, ctx.dense, scratch);
        let mut msgs = [0.0f64; 4];
        let mut b = u;
        for &(d, t) in nbrs {
            msgs[d] = self.message(t, d, c, ctx.w);
            b += msgs[d];
        }
        let worst = argmax(beliefs);
        if b < beliefs[worst] {
            self.labels[s * k + worst] = c;
            self.unary[s * k + worst] = u;
            for &(d, _) in nbrs {
                self.inbox[(s * 4 + d) * k + worst] = msgs[d];
            }
            beliefs[worst] = b;
        }
    }

    /// Runs one pass: recompute unaries, then `iterations` sweeps alternating
    /// raster and reverse-raster order.
    pub fn run_pass(&mut self, problem: &MatchProblem, t: &ColourTransform, w: &MatchWeights, iterations: usize, dense: bool) {
        let ctx = PassCtx { problem, t, w, dense };
        self.refresh_unaries(&ctx);
        let n = self.width * self.height;
        let mut scratch = Vec::new();
        for it in 0..iterations {
            if it % 2 == 0 {
                for s in 0..n {
                    self.visit(s, &ctx, &mut scratch);
                }
            } else {
                for s in (0..n).rev() {
                    self.visit(s, &ctx, &mut scratch);
                }
            }
        }
    }

    /// Index of the minimum-belief particle per pixel, with messages refreshed at
    /// the pixel first.
    fn selection(&self, w: &MatchWeights) -> Vec<usize> {
        let k = self.k;
        (0..self.width * self.height)
            .map(|s| {
                let mut b: Vec<f64> = self.unary[s * k..(s + 1) * k].to_vec();
                for d in 0..4 {
                    if let Some(t) = self.neighbour(s, d) {
                        for (j, bj) in b.iter_mut().enumerate() {
                            *bj += self.message(t, d, self.labels[s * k + j], w);
                        }
                    }
                }
                argmin(&b)
            })
            .collect()
    }

    /// Minimum-belief flow and its energy
    /// `Σ_s U_s + Σ_s Σ_{t∈N(s)} pairwise(s, t)` (each edge counted from both ends).
    /// Unaries are re-evaluated with exact descriptors, so energies of passes
    /// that used the dense cache stay comparable.
    pub fn labelling(&self, problem: &MatchProblem, t: &ColourTransform, w: &MatchWeights) -> (FlowField, f64) {
        let sel = self.selection(w);
        let k = self.k;
        let mut flow = FlowField::zeros(self.width, self.height);
        let mut energy = 0.0;
        let mut scratch = Vec::new();
        for s in 0..self.width * self.height {
            let l = self.labels[s * k + sel[s]];
            let (x, y) = (s % self.width, s / self.width);
            flow.set(x, y, l);
            energy += problem.unary_cost(x, y, l, t, w, false, &mut scratch);
            for d in 0..4 {
                if let Some(t) = self.neighbour(s, d) {
                    energy += pairwise_cost(l, self.labels[t * k + sel[t]], w.w_p, w.tau_p);
                }
            }
        }
        (flow, energy)
    }
}

fn clamp_flow(x: usize, y: usize, l: [f32; 2], w: usize, h: usize) -> [f32; 2] {
    let tx = (x as f32 + l[0]).clamp(0.0, (w - 1) as f32);
    let ty = (y as f32 + l[1]).clamp(0.0, (h - 1) as f32);
    [tx - x as f32, ty - y as f32]
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &b) in v.iter().enumerate() {
        if b < v[best] {
            best = i;
        }
    }
    best
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &b) in v.iter().enumerate() {
        if b > v[best] {
            best = i;
        }
    }
    best
}

/// Runs every pass of `schedule` with a fixed colour transform and returns the
/// final flow together with the energy after each pass.
pub fn pmbp_optimize(
    problem: &mut MatchProblem,
    schedule: &PassSchedule,
    cfg: &PmbpConfig,
    transform: &ColourTransform,
    init: Option<&FlowField>,
) -> Result<(FlowField, Vec<f64>), MatchError> {
    if schedule.passes().iter().any(|p| p.dense_descriptors) {
        problem.ensure_dense_target();
    }
    let mut state = PmbpState::new(problem, cfg, init)?;
    let mut trace = Vec::with_capacity(schedule.passes().len());
    let mut last = None;
    for pass in schedule.passes() {
        state.run_pass(problem, transform, &pass.weights, pass.iterations, pass.dense_descriptors);
        let (flow, e) = state.labelling(problem, transform, &pass.weights);
        trace.push(e);
        last = Some(flow);
    }
    Ok((last.expect("schedule is non-empty"), trace))
}
