use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::{psi, psi_prime, EnergyParts, SceneFlowParams};
use crate::imagecore::Raster;

/// Unknowns of one pixel: `[u1x, u1y, u2x, u2y, u3x, u3y]`.
pub(crate) type Px6 = [f64; 6];

/// RGB intensities plus their x and y central differences, as f64, interleaved
/// 9 values per pixel.
pub(crate) struct Plane {
    w: usize,
    h: usize,
    data: Vec<[f64; 9]>,
}

impl Plane {
    pub(crate) fn new(img: &Raster, scale: f64) -> Self {
        let (w, h) = (img.width(), img.height());
        let at = |x: usize, y: usize, c: usize| img.get(x, y, c) as f64 * scale;
        let mut data = vec![[0.0; 9]; w * h];
        for y in 0..h {
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
                let v = &mut data[y * w + x];
                for c in 0..3 {
                    v[c] = at(x, y, c);
                    v[3 + c] = (at(xr, y, c) - at(xl, y, c)) / (xr - xl).max(1) as f64;
                    v[6 + c] = (at(x, yd, c) - at(x, yu, c)) / (yd - yu).max(1) as f64;
                }
            }
        }
        Self { w, h, data }
    }

    /// Bilinear value and exact derivatives of the interpolant at `(x, y)`,
    /// which must lie in the image domain.
    #[inline]
    fn sample(&self, x: f64, y: f64) -> ([f64; 9], [f64; 9], [f64; 9]) {
        let x0 = (x.floor() as usize).min(self.w.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.h.saturating_sub(2));
        let x1 = (x0 + 1).min(self.w - 1);
        let y1 = (y0 + 1).min(self.h - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        let p00 = &self.data[y0 * self.w + x0];
        let p10 = &self.data[y0 * self.w + x1];
        let p01 = &self.data[y1 * self.w + x0];
        let p11 = &self.data[y1 * self.w + x1];
        let (mut v, mut dx, mut dy) = ([0.0; 9], [0.0; 9], [0.0; 9]);
        for c in 0..9 {
            v[c] = (1.0 - fx) * (1.0 - fy) * p00[c] + fx * (1.0 - fy) * p10[c] + (1.0 - fx) * fy * p01[c] + fx * fy * p11[c];
            dx[c] = (1.0 - fy) * (p10[c] - p00[c]) + fy * (p11[c] - p01[c]);
            dy[c] = (1.0 - fx) * (p01[c] - p00[c]) + fx * (p11[c] - p10[c]);
        }
        (v, dx, dy)
    }
}

#[derive(Clone, Copy, PartialEq)]
enum At {
    /// The pixel itself.
    X,
    /// `x + u1` in view 1 at t+1.
    A,
    /// `x + u2` in view 2 at t.
    B,
    /// `x + u1 + u2 + u3` in view 2 at t+1.
    C,
}

impl At {
    /// Which of u1, u2, u3 move this position.
    fn moves(self) -> [bool; 3] {
        match self {
            At::X => [false; 3],
            At::A => [true, false, false],
            At::B => [false, true, false],
            At::C => [true, true, true],
        }
    }
}

const I1T: usize = 0;
const I2T: usize = 1;
const I1N: usize = 2;
const I2N: usize = 3;

/// `(image, position) − (image, position)` for the four data terms.
const DATA_TERMS: [((usize, At), (usize, At)); 4] = [
    ((I1N, At::A), (I1T, At::X)),
    ((I2N, At::C), (I2T, At::B)),
    ((I2T, At::B), (I1T, At::X)),
    ((I2N, At::C), (I1N, At::A)),
];

/// Linearised residuals of one data term: 9 values with their gradients.
pub(crate) struct DataTerm {
    pub r: [f64; 9],
    pub g: [[f64; 6]; 9],
}

/// Residual and gradient of one epipolar term.
pub(crate) struct EpiTerm {
    pub r: f64,
    pub g: [f64; 6],
}

/// Single pyramid level of the four-frame problem.
pub(crate) struct Level {
    pub w: usize,
    pub h: usize,
    /// I1ᵗ, I2ᵗ, I1ᵗ⁺¹, I2ᵗ⁺¹, colour-corrected and scaled.
    planes: [Plane; 4],
    f_t: Matrix3<f64>,
    f_t1: Matrix3<f64>,
    occ: Vec<bool>,
    pub p: SceneFlowParams,
}

fn in_domain(w: usize, h: usize, x: f64, y: f64) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

impl Level {
    pub(crate) fn new(images: [&Raster; 4], f_t: Matrix3<f64>, f_t1: Matrix3<f64>, occ: Vec<bool>, p: SceneFlowParams) -> Self {
        let (w, h) = (images[0].width(), images[0].height());
        let s = p.intensity_scale;
        let planes = [Plane::new(images[0], s), Plane::new(images[1], s), Plane::new(images[2], s), Plane::new(images[3], s)];
        Self { w, h, planes, f_t, f_t1, occ, p }
    }

    fn position(x: f64, y: f64, u: &Px6, at: At) -> (f64, f64) {
        match at {
            At::X => (x, y),
            At::A => (x + u[0], y + u[1]),
            At::B => (x + u[2], y + u[3]),
            At::C => (x + u[0] + u[2] + u[4], y + u[1] + u[3] + u[5]),
        }
    }

    /// Data terms at pixel `q`; `None` entries are disabled (occluded or out of domain).
    pub(crate) fn data_terms(&self, q: usize, u: &Px6) -> [Option<DataTerm>; 4] {
        let (x, y) = ((q % self.w) as f64, (q / self.w) as f64);
        let mut out: [Option<DataTerm>; 4] = [None, None, None, None];
        if self.occ[q] {
            return out;
        }
        for (k, &((ip, ap), (im, am))) in DATA_TERMS.iter().enumerate() {
            let (px, py) = Self::position(x, y, u, ap);
            let (mx, my) = Self::position(x, y, u, am);
            if !in_domain(self.w, self.h, px, py) || !in_domain(self.w, self.h, mx, my) {
                continue;
            }
            let (vp, dxp, dyp) = self.planes[ip].sample(px, py);
            let (vm, dxm, dym) = self.planes[im].sample(mx, my);
            let mut t = DataTerm { r: [0.0; 9], g: [[0.0; 6]; 9] };
            for c in 0..9 {
                t.r[c] = vp[c] - vm[c];
                for (f, (&mp, &mm)) in ap.moves().iter().zip(am.moves().iter()).enumerate() {
                    if mp {
                        t.g[c][2 * f] += dxp[c];
                        t.g[c][2 * f + 1] += dyp[c];
                    }
                    if mm {
                        t.g[c][2 * f] -= dxm[c];
                        t.g[c][2 * f + 1] -= dym[c];
                    }
                }
            }
            out[k] = Some(t);
        }
        out
    }

    /// Both epipolar terms at pixel `q`.
    pub(crate) fn epi_terms(&self, q: usize, u: &Px6) -> [EpiTerm; 2] {
        let (x, y) = ((q % self.w) as f64, (q / self.w) as f64);
        let (ax, ay) = Self::position(x, y, u, At::A);
        let (bx, by) = Self::position(x, y, u, At::B);
        let (cx, cy) = Self::position(x, y, u, At::C);
        let e1 = epi_residual(&self.f_t, [x, y], [bx, by], self.p.epipolar_sampson);
        let e2 = epi_residual(&self.f_t1, [ax, ay], [cx, cy], self.p.epipolar_sampson);
        // e1: p fixed, q = x + u2; e2: p = x + u1, q = x + u1 + u2 + u3
        let t1 = EpiTerm { r: e1.0, g: [0.0, 0.0, e1.2[0], e1.2[1], 0.0, 0.0] };
        let t2 = EpiTerm {
            r: e2.0,
            g: [e2.1[0] + e2.2[0], e2.1[1] + e2.2[1], e2.2[0], e2.2[1], e2.2[0], e2.2[1]],
        };
        [t1, t2]
    }

    /// Squared forward-difference gradient magnitude of each flow at `q` (Neumann border).
    pub(crate) fn smooth_arg(&self, u: &[Px6], q: usize) -> [f64; 3] {
        let mut s = [0.0; 3];
        for n in self.forward_edges(q) {
            for (i, si) in s.iter_mut().enumerate() {
                let du = u[n][2 * i] - u[q][2 * i];
                let dv = u[n][2 * i + 1] - u[q][2 * i + 1];
                *si += du * du + dv * dv;
            }
        }
        s
    }

    pub(crate) fn energy(&self, u: &[Px6]) -> EnergyParts {
        let p = &self.p;
        let e = p.psi_epsilon;
        let mut parts = EnergyParts::default();
        for q in 0..self.w * self.h {
            for t in self.data_terms(q, &u[q]).iter().flatten() {
                let s1: f64 = t.r[..3].iter().map(|v| v * v).sum();
                let s2: f64 = t.r[3..].iter().map(|v| v * v).sum();
                parts.data += psi(s1, e) + p.gamma * psi(s2, e);
            }
            for (i, t) in self.epi_terms(q, &u[q]).iter().enumerate() {
                parts.epipolar_terms[i] += psi(t.r * t.r, e);
            }
            for (i, s) in self.smooth_arg(u, q).iter().enumerate() {
                parts.smoothness_terms[i] += psi(*s, e);
            }
        }
        parts.finish(p);
        parts
    }

    /// Linearises around `u` with robust weights lagged at `u + du`.
    pub(crate) fn assemble(&self, u: &[Px6], du: &[Px6]) -> System {
        let n = self.w * self.h;
        let p = &self.p;
        let e = p.psi_epsilon;
        let mut sys = System {
            a: vec![Matrix6::zeros(); n],
            b_data: vec![Vector6::zeros(); n],
            b_epi: vec![Vector6::zeros(); n],
            ws: vec![[0.0; 3]; n],
        };
        let moved: Vec<Px6> = u.iter().zip(du).map(|(a, b)| std::array::from_fn(|k| a[k] + b[k])).collect();
        for q in 0..n {
            let d = Vector6::from_column_slice(&du[q]);
            let a = &mut sys.a[q];
            for t in self.data_terms(q, &u[q]).iter().flatten() {
                for (range, weight) in [(0..3, 1.0), (3..9, p.gamma)] {
                    if weight == 0.0 {
                        continue;
                    }
                    let mut s = 0.0;
                    for c in range.clone() {
                        let g = Vector6::from_column_slice(&t.g[c]);
                        let rl = t.r[c] + g.dot(&d);
                        s += rl * rl;
                    }
                    let wgt = weight * psi_prime(s, e);
                    for c in range {
                        let g = Vector6::from_column_slice(&t.g[c]);
                        *a += g * g.transpose() * wgt;
                        sys.b_data[q] -= g * (wgt * t.r[c]);
                    }
                }
            }
            for (i, t) in self.epi_terms(q, &u[q]).iter().enumerate() {
                let g = Vector6::from_column_slice(&t.g);
                let rl = t.r + g.dot(&d);
                let wgt = p.alpha[i] * psi_prime(rl * rl, e);
                *a += g * g.transpose() * wgt;
                sys.b_epi[q] -= g * (wgt * t.r);
            }
            let s = self.smooth_arg(&moved, q);
            for i in 0..3 {
                sys.ws[q][i] = p.beta[i] * psi_prime(s[i], e);
            }
        }
        sys
    }

    /// Gradient of each energy family (data, weighted epipolar, weighted smoothness).
    pub(crate) fn gradient(&self, u: &[Px6]) -> [Vec<f64>; 3] {
        let n = self.w * self.h;
        let zero = vec![[0.0; 6]; n];
        let sys = self.assemble(u, &zero);
        let mut data = vec![0.0; 6 * n];
        let mut epi = vec![0.0; 6 * n];
        let mut smooth = vec![0.0; 6 * n];
        for q in 0..n {
            for k in 0..6 {
                data[6 * q + k] = -2.0 * sys.b_data[q][k];
                epi[6 * q + k] = -2.0 * sys.b_epi[q][k];
            }
            for nb in self.forward_edges(q) {
                for i in 0..3 {
                    for c in 0..2 {
                        let k = 2 * i + c;
                        let g = 2.0 * sys.ws[q][i] * (u[q][k] - u[nb][k]);
                        smooth[6 * q + k] += g;
                        smooth[6 * nb + k] -= g;
                    }
                }
            }
        }
        [data, epi, smooth]
    }

    /// Right and down neighbours of `q`, each edge owned by `q`.
    #[inline]
    pub(crate) fn forward_edges(&self, q: usize) -> impl Iterator<Item = usize> {
        let (x, y) = (q % self.w, q / self.w);
        [(x + 1 < self.w).then_some(q + 1), (y + 1 < self.h).then_some(q + self.w)].into_iter().flatten()
    }
}

/// Per-pixel normal equations of the linearised energy.
///
/// `a·du + Σ_edges ws·(du_q − du_n) = b_data + b_epi − Σ_edges ws·(u_q − u_n)`,
/// where an edge from `q` to its right or lower neighbour carries `ws[q]`.
pub(crate) struct System {
    pub a: Vec<Matrix6<f64>>,
    pub b_data: Vec<Vector6<f64>>,
    pub b_epi: Vec<Vector6<f64>>,
    pub ws: Vec<[f64; 3]>,
}

/// `(r, dr/dp, dr/dq)` for `r = q̂ᵀ F p̂`, optionally divided by the Sampson
/// denominator.
fn epi_residual(f: &Matrix3<f64>, p: [f64; 2], q: [f64; 2], sampson: bool) -> (f64, [f64; 2], [f64; 2]) {
    let ph = Vector3::new(p[0], p[1], 1.0);
    let qh = Vector3::new(q[0], q[1], 1.0);
    let l2 = f * ph;
    let l1 = f.tr_mul(&qh);
    let r = qh.dot(&l2);
    let drp = [l1.x, l1.y];
    let drq = [l2.x, l2.y];
    if !sampson {
        return (r, drp, drq);
    }
    let den = l2.x * l2.x + l2.y * l2.y + l1.x * l1.x + l1.y * l1.y;
    if den < 1e-24 {
        return (0.0, [0.0; 2], [0.0; 2]);
    }
    let sd = den.sqrt();
    let mut gp = [0.0; 2];
    let mut gq = [0.0; 2];
    for j in 0..2 {
        let dden_p = 2.0 * (l2.x * f[(0, j)] + l2.y * f[(1, j)]);
        let dden_q = 2.0 * (l1.x * f[(j, 0)] + l1.y * f[(j, 1)]);
        gp[j] = drp[j] / sd - r * dden_p / (2.0 * den * sd);
        gq[j] = drq[j] / sd - r * dden_q / (2.0 * den * sd);
    }
    (r / sd, gp, gq)
}
