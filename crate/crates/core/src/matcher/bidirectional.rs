use nalgebra::Matrix3;

use super::{estimate_colour_transform, ColourTransform, MatchError, MatchKind, MatchProblem, PassSchedule, PmbpConfig, PmbpState};
use crate::daisy::DaisyParams;
use crate::imagecore::{FlowField, Raster};
use crate::occlusion::forward_backward_mask;

/// Settings for [`match_bidirectional`]. `None` fields take the defaults of the
/// matching kind.
#[derive(Debug, Clone)]
pub struct MatchParams {
    pub particles: usize,
    /// Defaults to width/4 for stereo and width/8 for optical flow.
    pub search_range: Option<f64>,
    pub schedule: Option<PassSchedule>,
    pub daisy: Option<DaisyParams>,
    /// Forward-backward threshold selecting pixels for the colour fit.
    pub consistency_threshold: f64,
    pub max_colour_samples: usize,
    pub seed: u64,
    /// Run the two directions on separate threads.
    pub parallel: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            particles: 2,
            search_range: None,
            schedule: None,
            daisy: None,
            consistency_threshold: 3.0,
            max_colour_samples: 50_000,
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BidirectionalMatch {
    /// Image 1 → image 2.
    pub forward: FlowField,
    /// Image 2 → image 1.
    pub backward: FlowField,
    pub transform_forward: ColourTransform,
    pub transform_backward: ColourTransform,
    /// Energy after each pass.
    pub energy_forward: Vec<f64>,
    pub energy_backward: Vec<f64>,
}

/// Matches `img1 → img2` and `img2 → img1` with the pass schedule of `kind`.
///
/// For stereo `f` is required (`yᵀ F x = 0` for image-1 point `x`); the reverse
/// direction uses `Fᵀ`. After passes flagged for refitting, each direction's
/// colour transform is re-estimated from its forward-backward consistent pixels.
pub fn match_bidirectional(
    kind: MatchKind,
    img1: &Raster,
    img2: &Raster,
    f: Option<&Matrix3<f64>>,
    priors: Option<(&FlowField, &FlowField)>,
    params: &MatchParams,
) -> Result<BidirectionalMatch, MatchError> {
    let f = match kind {
        MatchKind::Stereo => Some(*f.ok_or(MatchError::MissingFundamental)?),
        MatchKind::OpticalFlow => None,
    };
    let schedule = params.schedule.clone().unwrap_or_else(|| PassSchedule::for_kind(kind));
    let daisy = params.daisy.unwrap_or(match kind {
        MatchKind::Stereo => DaisyParams::stereo(),
        MatchKind::OpticalFlow => DaisyParams::optical_flow(),
    });
    let range = params.search_range.unwrap_or_else(|| {
        let w = img1.width() as f64;
        match kind {
            MatchKind::Stereo => w / 4.0,
            MatchKind::OpticalFlow => w / 8.0,
        }
    });
    let dense = schedule.passes().iter().any(|p| p.dense_descriptors);
    let build = |a: &Raster, b: &Raster, f: Option<Matrix3<f64>>| -> Result<MatchProblem, MatchError> {
        let mut p = MatchProblem::new(a, b, f, daisy)?;
        if dense {
            p.ensure_dense_target();
        }
        Ok(p)
    };
    let (pf, pb) = if params.parallel {
        std::thread::scope(|sc| {
            let h = sc.spawn(|| build(img2, img1, f.map(|m| m.transpose())));
            let pf = build(img1, img2, f);
            (pf, h.join().expect("matcher thread panicked"))
        })
    } else {
        (build(img1, img2, f), build(img2, img1, f.map(|m| m.transpose())))
    };
    let (pf, pb) = (pf?, pb?);

    let cfg_f = PmbpConfig { particles: params.particles, search_range: range, seed: params.seed };
    let cfg_b = PmbpConfig { seed: params.seed ^ 0x9e37_79b9_7f4a_7c15, ..cfg_f };
    let mut sf = PmbpState::new(&pf, &cfg_f, priors.map(|p| p.0))?;
    let mut sb = PmbpState::new(&pb, &cfg_b, priors.map(|p| p.1))?;
    let mut tf = ColourTransform::identity();
    let mut tb = ColourTransform::identity();
    let (mut ef, mut eb) = (Vec::new(), Vec::new());
    let mut result = None;

    for pass in schedule.passes() {
        let w = &pass.weights;
        if params.parallel {
            std::thread::scope(|sc| {
                sc.spawn(|| sb.run_pass(&pb, &tb, w, pass.iterations, pass.dense_descriptors));
                sf.run_pass(&pf, &tf, w, pass.iterations, pass.dense_descriptors);
            });
        } else {
            sf.run_pass(&pf, &tf, w, pass.iterations, pass.dense_descriptors);
            sb.run_pass(&pb, &tb, w, pass.iterations, pass.dense_descriptors);
        }
        let (fwd, e1) = sf.labelling(&pf, &tf, w);
        let (bwd, e2) = sb.labelling(&pb, &tb, w);
        ef.push(e1);
        eb.push(e2);
        if pass.refit_colour {
            if let Some(t) = refit(img1, img2, &fwd, &bwd, params) {
                tf = t;
            }
            if let Some(t) = refit(img2, img1, &bwd, &fwd, params) {
                tb = t;
            }
        }
        result = Some((fwd, bwd));
    }
    let (forward, backward) = result.expect("schedule is non-empty");
    Ok(BidirectionalMatch {
        forward,
        backward,
        transform_forward: tf,
        transform_backward: tb,
        energy_forward: ef,
        energy_backward: eb,
    })
}

fn refit(a: &Raster, b: &Raster, fwd: &FlowField, bwd: &FlowField, params: &MatchParams) -> Option<ColourTransform> {
    let mask = forward_backward_mask(fwd, bwd, params.consistency_threshold).ok()?;
    let (w, h) = (a.width(), a.height());
    let good: Vec<usize> = (0..w * h).filter(|&i| !mask.data()[i]).collect();
    let stride = good.len().div_ceil(params.max_colour_samples.max(1)).max(1);
    let pairs: Vec<([f32; 3], [f32; 3])> = good
        .iter()
        .step_by(stride)
        .map(|&i| {
            let (x, y) = (i % w, i / w);
            let p = a.pixel(x, y);
            let [u, v] = fwd.get(x, y);
            let mut c2 = [0f32; 3];
            b.sample_into(x as f64 + u as f64, y as f64 + v as f64, &mut c2);
            ([p[0], p[1], p[2]], c2)
        })
        .collect();
    let t = estimate_colour_transform(&pairs).ok()?;
    t.is_finite().then_some(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(w: usize, h: usize, shift: f64, gain: f32) -> Raster {
        Raster::from_fn(w, h, 3, |x, y, out| {
            let (xf, yf) = (x as f64 - shift, y as f64);
            let v = 0.45 + 0.15 * (0.31 * xf + 0.17 * yf).sin() + 0.1 * (0.13 * xf - 0.29 * yf).cos();
            let g = 0.5 + 0.2 * (0.23 * xf - 0.41 * yf).cos();
            let b = 0.4 + 0.2 * (0.19 * xf + 0.07 * xf * yf * 0.05).sin();
            out[0] = gain * v as f32;
            out[1] = gain * g as f32;
            out[2] = gain * b as f32;
        })
    }

    #[test]
    fn stereo_requires_fundamental() {
        let a = scene(16, 16, 0.0, 1.0);
        let r = match_bidirectional(MatchKind::Stereo, &a, &a, None, None, &MatchParams::default());
        assert!(matches!(r, Err(MatchError::MissingFundamental)));
    }

    #[test]
    fn rectified_stereo_with_colour_gain() {
        let (w, h) = (48, 32);
        let a = scene(w, h, 0.0, 1.0);
        let b = scene(w, h, -2.0, 0.8);
        let f = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let params = MatchParams { search_range: Some(6.0), seed: 4, ..Default::default() };
        let m = match_bidirectional(MatchKind::Stereo, &a, &b, Some(&f), None, &params).unwrap();
        let mut good = 0;
        let mut n = 0;
        for y in 10..h - 10 {
            for x in 12..w - 10 {
                n += 1;
                let [u, v] = m.forward.get(x, y);
                if ((u + 2.0).powi(2) + v * v).sqrt() <= 0.5 {
                    good += 1;
                }
            }
        }
        assert!(good as f64 >= 0.9 * n as f64, "{good}/{n}");
        // gain of 0.8 should be picked up by the refit
        assert!((m.transform_forward.a_mat.trace() / 3.0 - 0.8).abs() < 0.1, "{:?}", m.transform_forward);
        assert_eq!(m.energy_forward.len(), 4);
    }

    #[test]
    fn parallel_matches_sequential() {
        let a = scene(20, 16, 0.0, 1.0);
        let b = scene(20, 16, 1.0, 1.0);
        let seq = MatchParams { search_range: Some(3.0), seed: 2, ..Default::default() };
        let par = MatchParams { parallel: true, ..seq.clone() };
        let r1 = match_bidirectional(MatchKind::OpticalFlow, &a, &b, None, None, &seq).unwrap();
        let r2 = match_bidirectional(MatchKind::OpticalFlow, &a, &b, None, None, &par).unwrap();
        assert_eq!(r1.forward, r2.forward);
        assert_eq!(r1.backward, r2.backward);
    }
}
