use nalgebra::{Matrix4, Vector4};

use super::{build_matting_laplacian, FillParams, OcclusionError, SparseSym};
use crate::imagecore::{BitMask, FlowField, Raster};

fn check_inputs(flow: &FlowField, mask: &BitMask) -> Result<Vec<bool>, OcclusionError> {
    if (flow.width(), flow.height()) != (mask.width(), mask.height()) {
        return Err(OcclusionError::DimensionMismatch);
    }
    // unknown flow counts as occluded
    let known: Vec<bool> = (0..flow.width() * flow.height())
        .map(|i| {
            let (x, y) = (i % flow.width(), i / flow.width());
            !mask.get(x, y) && flow.is_valid(x, y)
        })
        .collect();
    if !known.iter().any(|&k| k) {
        return Err(OcclusionError::AllOccluded);
    }
    Ok(known)
}

/// Solves `(L + λ·D)U = λ·U_C` for both flow components with one factorisation.
///
/// `D` is 1 at visible pixels and `U_C` holds the input flow there (zero
/// elsewhere). Every pixel of the result comes from the solve, so visible
/// values are smoothed slightly as well.
pub fn laplacian_fill(flow: &FlowField, mask: &BitMask, image: &Raster, p: &FillParams) -> Result<FlowField, OcclusionError> {
    p.validate()?;
    let known = check_inputs(flow, mask)?;
    if (image.width(), image.height()) != (flow.width(), flow.height()) {
        return Err(OcclusionError::DimensionMismatch);
    }
    let l = build_matting_laplacian(image, p.epsilon)?;
    let d: Vec<f64> = known.iter().map(|&k| if k { p.lambda } else { 0.0 }).collect();
    let a = l.add_diagonal(&d);
    let factor = a.factorize()?;
    let w = flow.width();
    let rhs = |c: usize| -> Vec<f64> {
        known
            .iter()
            .enumerate()
            .map(|(i, &k)| if k { p.lambda * flow.get(i % w, i / w)[c] as f64 } else { 0.0 })
            .collect()
    };
    let (su, sv) = std::thread::scope(|s| {
        let hv = s.spawn(|| factor.solve(&rhs(1)));
        let su = factor.solve(&rhs(0));
        (su, hv.join().expect("solve thread panicked"))
    });
    Ok(FlowField::from_fn(w, flow.height(), |x, y| {
        let i = y * w + x;
        [su[i] as f32, sv[i] as f32]
    }))
}

/// Harmonic (4-neighbour, unit weight) interpolation of occluded pixels with
/// visible pixels held fixed.
pub fn diffusion_fill(flow: &FlowField, mask: &BitMask) -> Result<FlowField, OcclusionError> {
    let known = check_inputs(flow, mask)?;
    let (w, h) = (flow.width(), flow.height());
    let mut unknown_idx = vec![usize::MAX; w * h];
    let mut order = Vec::new();
    for (i, &k) in known.iter().enumerate() {
        if !k {
            unknown_idx[i] = order.len();
            order.push(i);
        }
    }
    let mut out = flow.clone();
    if order.is_empty() {
        return Ok(out);
    }
    let m = order.len();
    let mut trip = Vec::with_capacity(m * 5);
    let mut rhs = [vec![0.0; m], vec![0.0; m]];
    for (r, &i) in order.iter().enumerate() {
        let (x, y) = ((i % w) as i64, (i / w) as i64);
        let mut deg = 0.0;
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            deg += 1.0;
            let j = ny as usize * w + nx as usize;
            if known[j] {
                let v = flow.get(nx as usize, ny as usize);
                rhs[0][r] += v[0] as f64;
                rhs[1][r] += v[1] as f64;
            } else {
                trip.push((r, unknown_idx[j], -1.0));
            }
        }
        trip.push((r, r, deg));
    }
    let a = SparseSym::from_triplets(m, &trip);
    let factor = a.factorize()?;
    let su = factor.solve(&rhs[0]);
    let sv = factor.solve(&rhs[1]);
    for (r, &i) in order.iter().enumerate() {
        out.set(i % w, i / w, [su[r] as f32, sv[r] as f32]);
    }
    Ok(out)
}

/// How well flow is explained locally by an affine function of colour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearityReport {
    /// Mean endpoint error of the per-window fits, pixels.
    pub mee: f64,
    /// Mean angle between `(u, v, 1)` and the fitted `(û, v̂, 1)`, degrees.
    pub aae_deg: f64,
    pub windows: usize,
}

/// Fits `u ≈ B·c + b` in every interior 3×3 window (penalising `‖B‖²` by
/// `epsilon`) and reports the residuals. Windows touching a masked pixel are
/// skipped when `mask` is given.
pub fn local_linearity_report(flow: &FlowField, image: &Raster, epsilon: f64, mask: Option<&BitMask>) -> Result<LinearityReport, OcclusionError> {
    let (w, h) = (flow.width(), flow.height());
    if (image.width(), image.height()) != (w, h) || mask.is_some_and(|m| (m.width(), m.height()) != (w, h)) {
        return Err(OcclusionError::DimensionMismatch);
    }
    if w < 3 || h < 3 {
        return Err(OcclusionError::ImageTooSmall(w, h));
    }
    let (mut sum_e, mut sum_a, mut count, mut windows) = (0.0, 0.0, 0usize, 0usize);
    for cy in 1..h - 1 {
        'win: for cx in 1..w - 1 {
            let mut pts = Vec::with_capacity(9);
            for y in cy - 1..=cy + 1 {
                for x in cx - 1..=cx + 1 {
                    if mask.is_some_and(|m| m.get(x, y)) || !flow.is_valid(x, y) {
                        continue 'win;
                    }
                    let c = image.pixel(x, y);
                    pts.push((Vector4::new(c[0] as f64, c[1] as f64, c[2] as f64, 1.0), flow.get(x, y)));
                }
            }
            let mut n = Matrix4::zeros();
            let mut r = [Vector4::zeros(); 2];
            for (c, u) in &pts {
                n += c * c.transpose();
                r[0] += c * u[0] as f64;
                r[1] += c * u[1] as f64;
            }
            for k in 0..3 {
                n[(k, k)] += epsilon;
            }
            let Some(ch) = n.cholesky() else { continue };
            let beta = [ch.solve(&r[0]), ch.solve(&r[1])];
            for (c, u) in &pts {
                let (fu, fv) = (beta[0].dot(c), beta[1].dot(c));
                let (u0, v0) = (u[0] as f64, u[1] as f64);
                sum_e += ((fu - u0).powi(2) + (fv - v0).powi(2)).sqrt();
                let dot = fu * u0 + fv * v0 + 1.0;
                let norm = ((fu * fu + fv * fv + 1.0) * (u0 * u0 + v0 * v0 + 1.0)).sqrt();
                sum_a += (dot / norm).clamp(-1.0, 1.0).acos().to_degrees();
                count += 1;
            }
            windows += 1;
        }
    }
    let c = count.max(1) as f64;
    Ok(LinearityReport { mee: sum_e / c, aae_deg: sum_a / c, windows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(w: usize, h: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Raster::from_fn(w, h, 3, |x, y, out| {
            let base = 0.5 + 0.2 * ((x as f32) * 0.4).sin() * ((y as f32) * 0.3).cos();
            for (k, o) in out.iter_mut().enumerate() {
                *o = base + 0.1 * k as f32 + 0.05 * rng.random::<f32>();
            }
        })
    }

    fn hole(w: usize, h: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> BitMask {
        BitMask::from_fn(w, h, |x, y| (x0..x1).contains(&x) && (y0..y1).contains(&y))
    }

    #[test]
    fn constant_flow_is_preserved() {
        let img = textured(14, 11, 1);
        let flow = FlowField::constant(14, 11, 2.5, -1.25);
        let m = hole(14, 11, 3, 9, 2, 7);
        let out = laplacian_fill(&flow, &m, &img, &FillParams::default()).unwrap();
        for y in 0..11 {
            for x in 0..14 {
                let [u, v] = out.get(x, y);
                assert!((u - 2.5).abs() < 1e-4 && (v + 1.25).abs() < 1e-4);
            }
        }
        let d = diffusion_fill(&flow, &m).unwrap();
        assert_eq!(d.get(5, 4), [2.5, -1.25]);
    }

    #[test]
    fn all_occluded_is_error() {
        let img = textured(5, 5, 0);
        let flow = FlowField::zeros(5, 5);
        let m = BitMask::filled(5, 5, true);
        assert!(matches!(laplacian_fill(&flow, &m, &img, &FillParams::default()), Err(OcclusionError::AllOccluded)));
        assert!(matches!(diffusion_fill(&flow, &m), Err(OcclusionError::AllOccluded)));
    }

    #[test]
    fn normal_equation_residual() {
        let (w, h) = (12, 9);
        let img = textured(w, h, 3);
        let flow = FlowField::from_fn(w, h, |x, y| [(x as f32 * 0.3).sin() * 4.0, y as f32 * 0.2]);
        let m = hole(w, h, 4, 8, 3, 6);
        let p = FillParams::default();
        let out = laplacian_fill(&flow, &m, &img, &p).unwrap();
        let l = build_matting_laplacian(&img, p.epsilon).unwrap();
        let d: Vec<f64> = (0..w * h).map(|i| if m.data()[i] { 0.0 } else { p.lambda }).collect();
        let a = l.add_diagonal(&d);
        let mut max_uc: f64 = 0.0;
        let mut worst: f64 = 0.0;
        for c in 0..2 {
            let u: Vec<f64> = (0..w * h).map(|i| out.get(i % w, i / w)[c] as f64).collect();
            let au = a.mul_vec(&u);
            for i in 0..w * h {
                let uc = if m.data()[i] { 0.0 } else { flow.get(i % w, i / w)[c] as f64 };
                max_uc = max_uc.max(uc.abs());
                worst = worst.max((au[i] - p.lambda * uc).abs());
            }
        }
        // output is stored as f32, so allow its rounding on top of the solve
        assert!(worst < 1e-6 * p.lambda * max_uc + 1e-5 * max_uc, "{worst}");
    }

    #[test]
    fn larger_lambda_tracks_input_more_closely() {
        let (w, h) = (12, 10);
        let img = textured(w, h, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let flow = FlowField::from_fn(w, h, |_, _| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)]);
        let m = hole(w, h, 3, 7, 3, 7);
        let dev = |lambda| {
            let out = laplacian_fill(&flow, &m, &img, &FillParams { lambda, ..Default::default() }).unwrap();
            let mut s = 0.0;
            let mut n = 0;
            for y in 0..h {
                for x in 0..w {
                    if !m.get(x, y) {
                        let (a, b) = (flow.get(x, y), out.get(x, y));
                        s += (((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) as f64).sqrt();
                        n += 1;
                    }
                }
            }
            s / n as f64
        };
        let (d1, d5, d50) = (dev(1.0), dev(5.0), dev(50.0));
        assert!(d1 > d5 && d5 > d50, "{d1} {d5} {d50}");
    }

    #[test]
    fn affine_in_colour_is_reconstructed() {
        let (w, h) = (16, 12);
        let img = textured(w, h, 5);
        // flow = B·c + b with one global (B, b)
        let flow = FlowField::from_fn(w, h, |x, y| {
            let c = img.pixel(x, y);
            [3.0 * c[0] - 2.0 * c[1] + c[2] + 0.5, -c[0] + 4.0 * c[2] - 1.0]
        });
        let m = hole(w, h, 5, 10, 4, 8);
        let p = FillParams { epsilon: 1e-7, lambda: 5.0, ..Default::default() };
        let out = laplacian_fill(&flow, &m, &img, &p).unwrap();
        for y in 4..8 {
            for x in 5..10 {
                let (a, b) = (flow.get(x, y), out.get(x, y));
                assert!((a[0] - b[0]).abs() < 1e-3 && (a[1] - b[1]).abs() < 1e-3, "{a:?} {b:?}");
            }
        }
        let rep = local_linearity_report(&flow, &img, 1e-9, None).unwrap();
        assert!(rep.mee < 1e-3 && rep.windows == (w - 2) * (h - 2));
    }

    #[test]
    fn diffusion_linear_ramp() {
        // 1 px tall row: boundary 0 on the left, 10 on the right
        let w = 12;
        let flow = FlowField::from_fn(w, 1, |x, _| if x == w - 1 { [10.0, 0.0] } else { [0.0, 0.0] });
        let m = BitMask::from_fn(w, 1, |x, _| x != 0 && x != w - 1);
        let out = diffusion_fill(&flow, &m).unwrap();
        for x in 0..w {
            let expect = 10.0 * x as f32 / (w - 1) as f32;
            assert!((out.get(x, 0)[0] - expect).abs() < 1e-4);
        }
    }

    #[test]
    fn diffusion_keeps_visible_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let flow = FlowField::from_fn(9, 7, |_, _| [rng.random(), rng.random()]);
        let m = hole(9, 7, 2, 5, 1, 4);
        let out = diffusion_fill(&flow, &m).unwrap();
        for y in 0..7 {
            for x in 0..9 {
                if !m.get(x, y) {
                    assert_eq!(out.get(x, y), flow.get(x, y));
                }
            }
        }
    }
}
