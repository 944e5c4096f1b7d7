use nalgebra::{Matrix3, Vector6};

use super::energy::{Level, Px6};
use super::{FourFrameFlows, SceneFlowError, SceneFlowParams, SceneFlowProblem};
use crate::daisy::blur_interleaved;
use crate::geometry::normalize_fundamental;
use crate::imagecore::Raster;

/// Energies seen while refining.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RefineReport {
    /// Full-resolution energy of the initialisation.
    pub initial_energy: f64,
    pub final_energy: f64,
    pub levels: Vec<LevelReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LevelReport {
    pub width: usize,
    pub height: usize,
    pub start_energy: f64,
    pub end_energy: f64,
    pub accepted_warps: usize,
}

/// Level sizes from coarse to fine; the last entry is the input size.
fn level_sizes(w: usize, h: usize, p: &SceneFlowParams) -> Vec<(usize, usize)> {
    let n = (p.start_scale.ln() / p.eta.ln()).round().max(0.0) as i32;
    let mut out: Vec<(usize, usize)> = Vec::new();
    for l in (0..=n).rev() {
        let s = p.eta.powi(l);
        let size = (((w as f64 * s).round() as usize).clamp(2, w), ((h as f64 * s).round() as usize).clamp(2, h));
        if out.last() != Some(&size) {
            out.push(size);
        }
    }
    out
}

/// Anti-aliased resampling with pixel-centre alignment.
fn resample(img: &Raster, lw: usize, lh: usize) -> Raster {
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    if (lw, lh) == (w, h) {
        return img.clone();
    }
    let (sx, sy) = (lw as f64 / w as f64, lh as f64 / h as f64);
    let s = sx.min(sy);
    let src = if s < 1.0 {
        let sigma = 0.5 * (1.0 / (s * s) - 1.0).sqrt();
        Raster::new(w, h, ch, blur_interleaved(img.data(), w, h, ch, sigma)).expect("same shape")
    } else {
        img.clone()
    };
    Raster::from_fn(lw, lh, ch, |x, y, out| {
        src.sample_into((x as f64 + 0.5) / sx - 0.5, (y as f64 + 0.5) / sy - 0.5, out);
    })
}

/// Resamples unknowns and rescales their components to the new grid.
fn resample_unknowns(u: &[Px6], w: usize, h: usize, lw: usize, lh: usize) -> Vec<Px6> {
    if (lw, lh) == (w, h) {
        return u.to_vec();
    }
    let (sx, sy) = (lw as f64 / w as f64, lh as f64 / h as f64);
    let mut out = vec![[0.0f64; 6]; lw * lh];
    for f in 0..3 {
        let data: Vec<f32> = u.iter().flat_map(|v| [v[2 * f] as f32, v[2 * f + 1] as f32]).collect();
        let r = resample(&Raster::new(w, h, 2, data).expect("shape"), lw, lh);
        for (o, c) in out.iter_mut().zip(r.data().chunks(2)) {
            o[2 * f] = c[0] as f64 * sx;
            o[2 * f + 1] = c[1] as f64 * sy;
        }
    }
    out
}

fn rescale_fundamental(f: &Matrix3<f64>, w: usize, h: usize, lw: usize, lh: usize, normalize: bool) -> Matrix3<f64> {
    let (sx, sy) = (lw as f64 / w as f64, lh as f64 / h as f64);
    // x_level = S·x_full
    let s = Matrix3::new(sx, 0.0, 0.5 * sx - 0.5, 0.0, sy, 0.5 * sy - 0.5, 0.0, 0.0, 1.0);
    let si = s.try_inverse().expect("scale matrix is invertible");
    let fl = si.transpose() * f * si;
    if normalize { normalize_fundamental(&fl) } else { fl }
}

/// A level pixel is occluded when most full-resolution pixels falling in it are.
fn downsample_mask(m: &[bool], w: usize, h: usize, lw: usize, lh: usize) -> Vec<bool> {
    if (lw, lh) == (w, h) {
        return m.to_vec();
    }
    let (sx, sy) = (lw as f64 / w as f64, lh as f64 / h as f64);
    let mut occ = vec![0usize; lw * lh];
    let mut tot = vec![0usize; lw * lh];
    for y in 0..h {
        let ly = (((y as f64 + 0.5) * sy) as usize).min(lh - 1);
        for x in 0..w {
            let lx = (((x as f64 + 0.5) * sx) as usize).min(lw - 1);
            tot[ly * lw + lx] += 1;
            if m[y * w + x] {
                occ[ly * lw + lx] += 1;
            }
        }
    }
    occ.iter().zip(&tot).map(|(&o, &t)| 2 * o > t).collect()
}

/// Approximately solves the linearised system for the increment `du` at `u`.
fn solve_increment(level: &Level, u: &[Px6]) -> Vec<Px6> {
    let p = &level.p;
    let (w, h) = (level.w, level.h);
    let n = w * h;
    let mut du = vec![[0.0f64; 6]; n];
    for _ in 0..p.inner_iterations.max(1) {
        let sys = level.assemble(u, &du);
        let mut factors = Vec::with_capacity(n);
        let mut base = Vec::with_capacity(n);
        for q in 0..n {
            let (x, y) = (q % w, q / w);
            let mut m = sys.a[q];
            let mut b = sys.b_data[q] + sys.b_epi[q];
            for (nb, wq) in incident(q, x, y, w, h, &sys.ws) {
                for i in 0..3 {
                    for c in 0..2 {
                        let k = 2 * i + c;
                        m[(k, k)] += wq[i];
                        b[k] -= wq[i] * (u[q][k] - u[nb][k]);
                    }
                }
            }
            factors.push(m.cholesky());
            base.push(b);
        }
        for _ in 0..p.sor_iterations {
            for q in 0..n {
                let Some(ch) = &factors[q] else { continue };
                let (x, y) = (q % w, q / w);
                let mut r: Vector6<f64> = base[q];
                for (nb, wq) in incident(q, x, y, w, h, &sys.ws) {
                    for i in 0..3 {
                        r[2 * i] += wq[i] * du[nb][2 * i];
                        r[2 * i + 1] += wq[i] * du[nb][2 * i + 1];
                    }
                }
                let sol = ch.solve(&r);
                for k in 0..6 {
                    du[q][k] = (1.0 - p.omega) * du[q][k] + p.omega * sol[k];
                }
            }
        }
    }
    du
}

/// Neighbours of `q` with the smoothness weight of the connecting edge.
#[inline]
fn incident(q: usize, x: usize, y: usize, w: usize, h: usize, ws: &[[f64; 3]]) -> impl Iterator<Item = (usize, [f64; 3])> {
    [
        (x + 1 < w).then(|| (q + 1, ws[q])),
        (y + 1 < h).then(|| (q + w, ws[q])),
        (x > 0).then(|| (q - 1, ws[q - 1])),
        (y > 0).then(|| (q - w, ws[q - w])),
    ]
    .into_iter()
    .flatten()
}

/// Coarse-to-fine minimisation of the four-frame energy starting from `init`.
///
/// Each level starts from the better of the upsampled coarser result and the
/// initialisation resampled to that level; each warp is accepted only if it
/// does not raise the level energy (halving the step up to 6 times). The
/// full-resolution energy of the result therefore never exceeds that of `init`.
pub fn refine(
    init: &FourFrameFlows,
    problem: &SceneFlowProblem,
    p: &SceneFlowParams,
) -> Result<(FourFrameFlows, RefineReport), SceneFlowError> {
    p.validate()?;
    let (w, h) = problem.check(init)?;
    let u0 = init.to_unknowns();
    let (v1t, v1n) = problem.corrected_view1();
    let full_occ = match problem.occlusion {
        Some(m) => m.data().to_vec(),
        None => vec![false; w * h],
    };
    let sizes = level_sizes(w, h, p);
    let mut prev: Option<(usize, usize, Vec<Px6>)> = None;
    let mut reports = Vec::with_capacity(sizes.len());
    let mut initial_energy = f64::NAN;
    for (li, &(lw, lh)) in sizes.iter().enumerate() {
        let imgs = [&v1t, problem.view2_t, &v1n, problem.view2_t1].map(|im| resample(im, lw, lh));
        let level = Level::new(
            [&imgs[0], &imgs[1], &imgs[2], &imgs[3]],
            rescale_fundamental(&problem.f_t, w, h, lw, lh, p.normalize_fundamental),
            rescale_fundamental(&problem.f_t1, w, h, lw, lh, p.normalize_fundamental),
            downsample_mask(&full_occ, w, h, lw, lh),
            *p,
        );
        let diverged = |warp| SceneFlowError::Diverged { level: li, width: lw, height: lh, warp };
        let mut u = resample_unknowns(&u0, w, h, lw, lh);
        let mut e = level.energy(&u).total;
        if (lw, lh) == (w, h) {
            initial_energy = e;
        }
        if let Some((pw, ph, pu)) = &prev {
            let up = resample_unknowns(pu, *pw, *ph, lw, lh);
            let eu = level.energy(&up).total;
            if eu < e || !e.is_finite() {
                u = up;
                e = eu;
            }
        }
        if !e.is_finite() {
            return Err(diverged(0));
        }
        let start = e;
        let mut accepted = 0;
        for warp in 0..p.warps {
            let du = solve_increment(&level, &u);
            if du.iter().flatten().any(|v| !v.is_finite()) {
                return Err(diverged(warp));
            }
            let mut step = 1.0;
            let mut moved = false;
            for _ in 0..7 {
                let cand: Vec<Px6> = u.iter().zip(&du).map(|(a, d)| std::array::from_fn(|k| a[k] + step * d[k])).collect();
                let ec = level.energy(&cand).total;
                if ec <= e {
                    u = cand;
                    e = ec;
                    moved = true;
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
            accepted += 1;
        }
        log::debug!("level {li} {lw}x{lh}: energy {start:.6e} -> {e:.6e} ({accepted} warps)");
        reports.push(LevelReport { width: lw, height: lh, start_energy: start, end_energy: e, accepted_warps: accepted });
        prev = Some((lw, lh, u));
    }
    let (_, _, u) = prev.expect("at least one level");
    let final_energy = reports.last().map_or(f64::NAN, |r| r.end_energy);
    debug_assert!(final_energy <= initial_energy);
    Ok((FourFrameFlows::from_unknowns(w, h, &u), RefineReport { initial_energy, final_energy, levels: reports }))
}
