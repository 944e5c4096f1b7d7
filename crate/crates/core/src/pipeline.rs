//! End-to-end processing of a calibrated stereo sequence and evaluation of
//! the written artifacts against ground truth.
//!
//! Output layout under the output directory, `NNNN` being the time step:
//!
//! ```text
//! matcher/u2_NNNN.flo  u2b_NNNN.flo      stereo view 1 -> 2 and back, every step
//! matcher/u1_NNNN.flo  u1b_NNNN.flo      view-1 optical flow t -> t+1 and back
//! matcher/f2_NNNN.flo  f2b_NNNN.flo      view-2 optical flow
//! matcher/colour_NNNN.json               fitted view-1 -> view-2 colour transform
//! occlusion/stereo_NNNN.pgm flow1_NNNN.pgm flow2_NNNN.pgm union_NNNN.pgm
//! filled/u2_NNNN.flo u1_NNNN.flo f2_NNNN.flo
//! refined/u1_NNNN.flo u2_NNNN.flo u3_NNNN.flo depth_NNNN.pfm sceneflow_NNNN.ply refine_NNNN.json
//! viz/<stage>_u2_NNNN.png
//! manifest.json, report.json, report.csv
//! ```

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::daisy::DaisyParams;
use crate::geometry::load_calibration;
use crate::imagecore::{
    flow_to_color, read_flo, read_image, read_mask_pgm, write_flo, write_mask_pgm, write_png8, BitMask, FlowField,
    MaxMagnitude, Raster,
};
use crate::matcher::{match_bidirectional, BidirectionalMatch, ColourTransform, MatchKind, MatchParams, PassSchedule};
use crate::metrics::{aae_sceneflow, flow2d_errors, mae_disparity, rmse_sceneflow, EvalReport, FrameReport, SceneFlowTuples, Stage};
use crate::occlusion::{forward_backward_mask, laplacian_fill, morphological_close, FillParams};
use crate::sceneflow::{init_u3, refine, triangulate_scene_flow, write_depth_pfm, write_ply, FourFrameFlows, SceneFlowParams, SceneFlowProblem};
use crate::synthetic::frame_name;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("stage {stage}, frame {frame}: {source}")]
    Stage {
        stage: &'static str,
        frame: usize,
        #[source]
        source: BoxError,
    },
    #[error("evaluation: {0}")]
    Eval(String),
}

fn at<E: Into<BoxError>>(stage: &'static str, frame: usize) -> impl FnOnce(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, frame, source: e.into() }
}

/// Matcher settings for one kind; unset fields use the kind's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindConfig {
    pub search_range: Option<f64>,
    pub schedule: Option<PassSchedule>,
    pub daisy: Option<DaisyParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatcherConfig {
    pub particles: usize,
    pub consistency_threshold: f64,
    pub max_colour_samples: usize,
    pub stereo: KindConfig,
    pub optical_flow: KindConfig,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        let m = MatchParams::default();
        Self {
            particles: m.particles,
            consistency_threshold: m.consistency_threshold,
            max_colour_samples: m.max_colour_samples,
            stereo: KindConfig::default(),
            optical_flow: KindConfig::default(),
        }
    }
}

/// Which stages run. Matching off reuses the matcher flows already in the
/// output directory; occlusion off disables filling and masked refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageToggles {
    #[serde(rename = "match")]
    pub matching: bool,
    pub occlusion: bool,
    pub fill: bool,
    pub sceneflow: bool,
    pub eval: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self { matching: true, occlusion: true, fill: true, sceneflow: true, eval: true }
    }
}

impl StageToggles {
    pub const NAMES: [&'static str; 5] = ["match", "occlusion", "fill", "sceneflow", "eval"];

    /// Enables exactly the comma-separated stages.
    pub fn from_list(list: &str) -> Result<Self, PipelineError> {
        let mut t = Self { matching: false, occlusion: false, fill: false, sceneflow: false, eval: false };
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "match" => t.matching = true,
                "occlusion" => t.occlusion = true,
                "fill" => t.fill = true,
                "sceneflow" => t.sceneflow = true,
                "eval" => t.eval = true,
                other => return Err(PipelineError::Config(format!("unknown stage {other:?}; expected one of {:?}", Self::NAMES))),
            }
        }
        Ok(t)
    }

    fn flags(&self) -> [bool; 5] {
        [self.matching, self.occlusion, self.fill, self.sceneflow, self.eval]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Camera-1 image path with `{frame}` standing for the 4-digit step.
    pub cam1: String,
    pub cam2: String,
    pub calibration: PathBuf,
    pub output: PathBuf,
    /// Directory with `u1_`, `u2_`, `u3_NNNN.flo` and `occ_`, `occall_NNNN.pgm`.
    pub ground_truth: Option<PathBuf>,
    /// Number of time steps; found from the camera-1 files when absent.
    pub frames: Option<usize>,
    pub stages: StageToggles,
    pub seed: u64,
    /// Frames processed concurrently.
    pub jobs: usize,
    pub matcher: MatcherConfig,
    pub fill: FillParams,
    pub sceneflow: SceneFlowParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cam1: "cam1/{frame}.png".into(),
            cam2: "cam2/{frame}.png".into(),
            calibration: "calibration.json".into(),
            output: "out".into(),
            ground_truth: None,
            frames: None,
            stages: StageToggles::default(),
            seed: 0,
            jobs: 1,
            matcher: MatcherConfig::default(),
            fill: FillParams::default(),
            sceneflow: SceneFlowParams::default(),
        }
    }
}

fn diff_keys(prefix: &str, a: &serde_json::Value, b: &serde_json::Value, out: &mut Vec<String>) {
    match (a, b) {
        (serde_json::Value::Object(x), serde_json::Value::Object(y)) => {
            for (k, v) in x {
                diff_keys(&format!("{prefix}.{k}"), v, y.get(k).unwrap_or(&serde_json::Value::Null), out);
            }
        }
        _ if a != b => out.push(format!("{prefix} = {a}")),
        _ => {}
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths are taken relative to its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut c: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        c.rebase(path.parent().unwrap_or(Path::new(".")));
        Ok(c)
    }

    /// Config for a dataset written by [`crate::synthetic::SyntheticDataset::write`].
    pub fn for_dataset(dataset: &Path, output: &Path) -> Self {
        let mut c = Self { ground_truth: Some("gt".into()), ..Self::default() };
        c.rebase(dataset);
        c.output = output.to_path_buf();
        c
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let join = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.cam1 = join(Path::new(&self.cam1)).to_string_lossy().into_owned();
        self.cam2 = join(Path::new(&self.cam2)).to_string_lossy().into_owned();
        self.calibration = join(&self.calibration);
        self.output = join(&self.output);
        self.ground_truth = self.ground_truth.as_deref().map(join);
    }

    pub fn image_path(pattern: &str, t: usize) -> PathBuf {
        PathBuf::from(pattern.replace("{frame}", &frame_name(t)))
    }

    /// Checks parameters and inputs; returns the number of time steps.
    pub fn validate(&self) -> Result<usize, PipelineError> {
        let bad = |s: String| Err(PipelineError::Config(s));
        self.fill.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.sceneflow.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        for k in [&self.matcher.stereo, &self.matcher.optical_flow] {
            if let Some(s) = &k.schedule {
                PassSchedule::new(s.passes().to_vec()).map_err(|e| PipelineError::Config(e.to_string()))?;
            }
            if let Some(d) = &k.daisy {
                d.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
            }
        }
        if self.matcher.particles == 0 {
            return bad("matcher.particles must be >= 1".into());
        }
        if !self.cam1.contains("{frame}") || !self.cam2.contains("{frame}") {
            return bad("camera patterns must contain {frame}".into());
        }
        let n = match self.frames {
            Some(n) => n,
            None => (0..).take_while(|&t| Self::image_path(&self.cam1, t).exists()).count(),
        };
        if n < 2 {
            return bad(format!("need at least two time steps, found {n}"));
        }
        // synchronisation check: both cameras cover every step
        for t in 0..n {
            for p in [&self.cam1, &self.cam2] {
                let f = Self::image_path(p, t);
                if !f.exists() {
                    return bad(format!("missing image {}", f.display()));
                }
            }
        }
        if !self.calibration.exists() {
            return bad(format!("missing calibration {}", self.calibration.display()));
        }
        if let Some(g) = &self.ground_truth {
            if !g.is_dir() {
                return bad(format!("missing ground-truth directory {}", g.display()));
            }
        }
        Ok(n)
    }

    /// Parameters that differ from the built-in defaults, as `path = value`.
    pub fn overrides(&self) -> Vec<String> {
        let d = Self::default();
        let mut out = Vec::new();
        let blocks = [
            ("matcher", serde_json::to_value(&self.matcher), serde_json::to_value(&d.matcher)),
            ("fill", serde_json::to_value(self.fill), serde_json::to_value(d.fill)),
            ("sceneflow", serde_json::to_value(self.sceneflow), serde_json::to_value(d.sceneflow)),
        ];
        for (name, a, b) in blocks {
            if let (Ok(a), Ok(b)) = (a, b) {
                diff_keys(name, &a, &b, &mut out);
            }
        }
        out
    }

    fn match_params(&self, kind: MatchKind, seed: u64) -> MatchParams {
        let k = match kind {
            MatchKind::Stereo => &self.matcher.stereo,
            MatchKind::OpticalFlow => &self.matcher.optical_flow,
        };
        MatchParams {
            particles: self.matcher.particles,
            search_range: k.search_range,
            schedule: k.schedule.clone(),
            daisy: k.daisy,
            consistency_threshold: self.matcher.consistency_threshold,
            max_colour_samples: self.matcher.max_colour_samples,
            seed,
            parallel: self.jobs > 1,
        }
    }
}

/// Independent stream per (stage, frame).
fn stream_seed(seed: u64, stage: u64, t: usize) -> u64 {
    let mut z = seed ^ stage.wrapping_mul(0xd1b5_4a32_d192_ed03) ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs `f(0..n)` on up to `jobs` threads; results keep index order.
fn run_indexed<T: Send, F>(n: usize, jobs: usize, f: F) -> Result<Vec<T>, PipelineError>
where
    F: Fn(usize) -> Result<T, PipelineError> + Sync,
{
    if jobs <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T, PipelineError>>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots").into_iter().map(|r| r.expect("every index ran")).collect()
}

/// View-1 mask of pixels whose point, followed by `flow`, lands on a marked
/// pixel of `other` or outside it.
fn pull_mask(other: &BitMask, flow: &FlowField) -> BitMask {
    let (w, h) = (other.width(), other.height());
    BitMask::from_fn(flow.width(), flow.height(), |x, y| {
        if !flow.is_valid(x, y) {
            return true;
        }
        let [u, v] = flow.get(x, y);
        let (tx, ty) = ((x as f64 + u as f64).round(), (y as f64 + v as f64).round());
        if tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
            return true;
        }
        other.get(tx as usize, ty as usize)
    })
}

/// Replaces unknown vectors by filling them from their neighbours.
fn complete(flow: FlowField, image: &Raster, p: &FillParams) -> FlowField {
    let (w, h) = (flow.width(), flow.height());
    let holes = BitMask::from_fn(w, h, |x, y| !flow.is_valid(x, y));
    match holes.count() {
        0 => flow,
        n if n == w * h => FlowField::zeros(w, h),
        _ => laplacian_fill(&flow, &holes, image, p).unwrap_or_else(|_| {
            let mut f = flow;
            for (x, y) in (0..h).flat_map(|y| (0..w).map(move |x| (x, y))) {
                if !f.is_valid(x, y) {
                    f.set(x, y, [0.0, 0.0]);
                }
            }
            f
        }),
    }
}

struct Io<'a> {
    out: &'a Path,
}

impl Io<'_> {
    fn path(&self, sub: &str, name: &str, t: usize, ext: &str) -> PathBuf {
        self.out.join(sub).join(format!("{name}_{}.{ext}", frame_name(t)))
    }
    fn flo(&self, sub: &str, name: &str, t: usize, f: &FlowField, stage: &'static str) -> Result<(), PipelineError> {
        write_flo(self.path(sub, name, t, "flo"), f).map_err(at(stage, t))
    }
    fn mask(&self, name: &str, t: usize, m: &BitMask) -> Result<(), PipelineError> {
        write_mask_pgm(self.path("occlusion", name, t, "pgm"), m).map_err(at("occlusion", t))
    }
    fn viz(&self, stage: &str, t: usize, f: &FlowField) -> Result<(), PipelineError> {
        let img = flow_to_color(f, MaxMagnitude::Auto);
        write_png8(self.out.join("viz").join(format!("{stage}_u2_{}.png", frame_name(t))), &img).map_err(at("viz", t))
    }
    fn read(&self, sub: &str, name: &str, t: usize) -> Result<FlowField, PipelineError> {
        read_flo(self.path(sub, name, t, "flo")).map_err(at("match", t))
    }
}

/// Colour transform `c ↦ A·c + a` as stored on disk; `A` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColourFile {
    #[serde(rename = "A")]
    pub a_mat: [[f64; 3]; 3],
    #[serde(rename = "a")]
    pub offset: [f64; 3],
}

impl From<&ColourTransform> for ColourFile {
    fn from(t: &ColourTransform) -> Self {
        Self { a_mat: std::array::from_fn(|r| std::array::from_fn(|c| t.a_mat[(r, c)])), offset: [t.offset.x, t.offset.y, t.offset.z] }
    }
}

struct Pair {
    forward: FlowField,
    backward: FlowField,
    result: Option<BidirectionalMatch>,
}

impl Pair {
    fn from_match(m: BidirectionalMatch) -> Self {
        Self { forward: m.forward.clone(), backward: m.backward.clone(), result: Some(m) }
    }
}

/// Summary written to `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub frames: usize,
    pub seed: u64,
    pub stages_run: Vec<&'static str>,
    pub stages_skipped: Vec<&'static str>,
    pub overrides: Vec<String>,
    pub notes: Vec<String>,
}

#[derive(Debug)]
pub struct PipelineOutcome {
    pub manifest: Manifest,
    pub report: Option<EvalReport>,
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutcome, PipelineError> {
    let n = cfg.validate()?;
    let rigs = load_calibration(&cfg.calibration, Some(n)).map_err(at("calibration", 0))?;
    let overrides = cfg.overrides();
    for o in &overrides {
        log::info!("parameter override: {o}");
    }
    let out = cfg.output.as_path();
    let st = cfg.stages;
    let do_fill = st.fill && st.occlusion;
    let dirs = [("matcher", true), ("occlusion", st.occlusion), ("filled", do_fill), ("refined", st.sceneflow), ("viz", true)];
    for (sub, _) in dirs.iter().filter(|d| d.1) {
        std::fs::create_dir_all(out.join(sub)).map_err(|e| PipelineError::Config(format!("{}: {e}", out.display())))?;
    }
    let io = Io { out };
    let mut notes = Vec::new();
    if st.fill && !st.occlusion {
        notes.push("fill skipped: it needs the occlusion stage".to_string());
    }
    let do_eval = st.eval && cfg.ground_truth.is_some();
    if st.eval && !do_eval {
        notes.push("eval skipped: no ground truth configured".to_string());
    }

    let images: Vec<[Raster; 2]> = run_indexed(n, cfg.jobs, |t| {
        let load = |p: &str| read_image(PipelineConfig::image_path(p, t)).map(|r| r.to_rgb()).map_err(at("load", t));
        Ok([load(&cfg.cam1)?, load(&cfg.cam2)?])
    })?;

    // correspondence
    log::info!("matching {n} steps");
    let stereo: Vec<Pair> = run_indexed(n, cfg.jobs, |t| {
        if !st.matching {
            return Ok(Pair { forward: io.read("matcher", "u2", t)?, backward: io.read("matcher", "u2b", t)?, result: None });
        }
        let [a, b] = &images[t];
        let m = match_bidirectional(MatchKind::Stereo, a, b, Some(&rigs[t].f), None, &cfg.match_params(MatchKind::Stereo, stream_seed(cfg.seed, 1, t)))
            .map_err(at("match", t))?;
        io.flo("matcher", "u2", t, &m.forward, "match")?;
        io.flo("matcher", "u2b", t, &m.backward, "match")?;
        io.viz("matcher", t, &m.forward)?;
        let c = ColourFile::from(&m.transform_forward);
        let json = serde_json::to_string_pretty(&c).map_err(at("match", t))?;
        std::fs::write(io.path("matcher", "colour", t, "json"), json).map_err(at("match", t))?;
        Ok(Pair::from_match(m))
    })?;
    // temporal flows per view: index 2t is view 1, 2t+1 view 2
    let temporal: Vec<Pair> = run_indexed(2 * (n - 1), cfg.jobs, |i| {
        let (t, view) = (i / 2, i % 2);
        let (name, bname) = if view == 0 { ("u1", "u1b") } else { ("f2", "f2b") };
        if !st.matching {
            return Ok(Pair { forward: io.read("matcher", name, t)?, backward: io.read("matcher", bname, t)?, result: None });
        }
        let seed = stream_seed(cfg.seed, 2 + view as u64, t);
        let m = match_bidirectional(MatchKind::OpticalFlow, &images[t][view], &images[t + 1][view], None, None, &cfg.match_params(MatchKind::OpticalFlow, seed))
            .map_err(at("match", t))?;
        io.flo("matcher", name, t, &m.forward, "match")?;
        io.flo("matcher", bname, t, &m.backward, "match")?;
        Ok(Pair::from_match(m))
    })?;

    // occlusion masks
    let closing = cfg.fill.closing_radius;
    let fb = |p: &Pair, stage_t: usize| -> Result<BitMask, PipelineError> {
        let m = forward_backward_mask(&p.forward, &p.backward, cfg.fill.fb_threshold).map_err(at("occlusion", stage_t))?;
        Ok(morphological_close(&m, closing))
    };
    let stereo_masks: Vec<Option<BitMask>> = stereo
        .iter()
        .enumerate()
        .map(|(t, p)| {
            if !st.occlusion {
                return Ok(None);
            }
            let m = fb(p, t)?;
            io.mask("stereo", t, &m)?;
            Ok(Some(m))
        })
        .collect::<Result<_, PipelineError>>()?;
    let temporal_masks: Vec<Option<BitMask>> = temporal
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if !st.occlusion {
                return Ok(None);
            }
            let m = fb(p, i / 2)?;
            io.mask(if i % 2 == 0 { "flow1" } else { "flow2" }, i / 2, &m)?;
            Ok(Some(m))
        })
        .collect::<Result<_, PipelineError>>()?;

    // occlusion filling
    let fill_one = |flow: &FlowField, mask: &Option<BitMask>, image: &Raster, t: usize| -> Result<FlowField, PipelineError> {
        match (do_fill, mask) {
            (true, Some(m)) if m.count() < m.width() * m.height() => laplacian_fill(flow, m, image, &cfg.fill).map_err(at("fill", t)),
            (true, Some(_)) => Err(at("fill", t)("every pixel is occluded")),
            _ => Ok(flow.clone()),
        }
    };
    let filled_u2: Vec<FlowField> = run_indexed(n, cfg.jobs, |t| {
        let f = fill_one(&stereo[t].forward, &stereo_masks[t], &images[t][0], t)?;
        if do_fill {
            io.flo("filled", "u2", t, &f, "fill")?;
            io.viz("filled", t, &f)?;
        }
        Ok(f)
    })?;
    let filled_temporal: Vec<FlowField> = run_indexed(2 * (n - 1), cfg.jobs, |i| {
        let (t, view) = (i / 2, i % 2);
        let f = fill_one(&temporal[i].forward, &temporal_masks[i], &images[t][view], t)?;
        if do_fill {
            io.flo("filled", if view == 0 { "u1" } else { "f2" }, t, &f, "fill")?;
        }
        Ok(f)
    })?;

    // scene flow
    if st.sceneflow {
        run_indexed(n - 1, cfg.jobs, |t| {
            let (u1, u2, f2) = (&filled_temporal[2 * t], &filled_u2[t], &filled_temporal[2 * t + 1]);
            let u3 = complete(init_u3(u1, u2, f2), &images[t][0], &cfg.fill);
            let init = FourFrameFlows { u1: u1.clone(), u2: u2.clone(), u3 };
            let union = match (&stereo_masks[t], &temporal_masks[2 * t], &temporal_masks[2 * t + 1], &stereo_masks[t + 1]) {
                (Some(s), Some(m1), Some(m2), Some(s1)) => {
                    let m = s.union(m1).union(&pull_mask(m2, u2)).union(&pull_mask(s1, u1));
                    io.mask("union", t, &m)?;
                    Some(m)
                }
                _ => None,
            };
            let transform = stereo[t].result.as_ref().map(|m| m.transform_forward).unwrap_or_default();
            let problem = SceneFlowProblem {
                view1_t: &images[t][0],
                view2_t: &images[t][1],
                view1_t1: &images[t + 1][0],
                view2_t1: &images[t + 1][1],
                f_t: rigs[t].f,
                f_t1: rigs[t + 1].f,
                occlusion: union.as_ref(),
                transform,
            };
            let (flows, report) = refine(&init, &problem, &cfg.sceneflow).map_err(at("sceneflow", t))?;
            io.flo("refined", "u1", t, &flows.u1, "sceneflow")?;
            io.flo("refined", "u2", t, &flows.u2, "sceneflow")?;
            io.flo("refined", "u3", t, &flows.u3, "sceneflow")?;
            io.viz("refined", t, &flows.u2)?;
            let json = serde_json::to_string_pretty(&report).map_err(at("sceneflow", t))?;
            std::fs::write(io.path("refined", "refine", t, "json"), json).map_err(at("sceneflow", t))?;
            let sf = triangulate_scene_flow(&flows, &rigs[t], &rigs[t + 1], union.as_ref());
            write_ply(io.path("refined", "sceneflow", t, "ply"), &sf, Some(&images[t][0])).map_err(at("triangulate", t))?;
            write_depth_pfm(io.path("refined", "depth", t, "pfm"), &sf).map_err(at("triangulate", t))?;
            Ok(())
        })?;
    }

    let mut run = Vec::new();
    let mut skipped = Vec::new();
    let effective = [st.matching, st.occlusion, do_fill, st.sceneflow, do_eval];
    for (name, on) in StageToggles::NAMES.into_iter().zip(effective) {
        if on { run.push(name) } else { skipped.push(name) }
    }
    if st.flags() != effective {
        log::warn!("{}", notes.join("; "));
    }
    if !st.matching {
        notes.push("matcher flows reused from the output directory".into());
    }
    let manifest = Manifest { frames: n, seed: cfg.seed, stages_run: run, stages_skipped: skipped, overrides, notes };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(out.join("manifest.json"), text).map_err(|e| PipelineError::Config(e.to_string()))?;

    let report = match (&cfg.ground_truth, do_eval) {
        (Some(gt), true) => Some(eval_command(out, gt)?),
        _ => None,
    };
    Ok(PipelineOutcome { manifest, report })
}

fn stage_dir(s: Stage) -> &'static str {
    match s {
        Stage::Matcher => "matcher",
        Stage::Filled => "filled",
        Stage::Refined => "refined",
    }
}

fn frames_present(dir: &Path, prefix: &str) -> Vec<usize> {
    let Ok(rd) = std::fs::read_dir(dir) else { return Vec::new() };
    let mut v: Vec<usize> = rd
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_prefix(prefix)?.strip_suffix(".flo")?.parse().ok()
        })
        .collect();
    v.sort_unstable();
    v
}

/// Scores every stage found under `est` against `gt` and writes
/// `report.json` and `report.csv` into `est`.
///
/// MAE_d excludes `occ_NNNN.pgm`; scene-flow errors exclude `occall_NNNN.pgm`
/// (or `occ_` when absent). MEE and AAE_2D score the last stage's `u2` on the
/// same pixels as MAE_d.
pub fn eval_command(est: &Path, gt: &Path) -> Result<EvalReport, PipelineError> {
    let err = |s: String| PipelineError::Eval(s);
    let gt_path = |name: &str, t: usize, ext: &str| gt.join(format!("{name}_{}.{ext}", frame_name(t)));
    let mut frames: Vec<usize> = Stage::ALL.iter().flat_map(|&s| frames_present(&est.join(stage_dir(s)), "u2_")).collect();
    frames.sort_unstable();
    frames.dedup();
    if frames.is_empty() {
        return Err(err(format!("no estimated u2 flows under {}", est.display())));
    }
    let mut report = EvalReport::default();
    for &t in &frames {
        let g2 = read_flo(gt_path("u2", t, "flo")).map_err(|e| err(format!("ground truth for frame {t}: {e}")))?;
        let occ = read_mask_pgm(gt_path("occ", t, "pgm")).map_err(|e| err(format!("ground truth for frame {t}: {e}")))?;
        let (w, h) = (g2.width(), g2.height());
        let gt_d = Raster::from_fn(w, h, 1, |x, y, o| {
            o[0] = if g2.is_valid(x, y) { g2.get(x, y)[0].hypot(g2.get(x, y)[1]) } else { f32::NAN }
        });
        let mut fr = FrameReport { frame: t, ..Default::default() };
        let mut last = None;
        for s in Stage::ALL {
            let p = est.join(stage_dir(s)).join(format!("u2_{}.flo", frame_name(t)));
            if !p.exists() {
                continue;
            }
            let u2 = read_flo(&p).map_err(|e| err(e.to_string()))?;
            fr.set_mae_d(s, mae_disparity(&u2, &gt_d, Some(&occ)).map_err(|e| err(format!("frame {t}: {e}")))?);
            last = Some(u2);
        }
        let visible = BitMask::from_fn(w, h, |x, y| !occ.get(x, y));
        if let Some(u2) = &last {
            fr.pixels = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).filter(|&(x, y)| visible.get(x, y) && u2.is_valid(x, y) && gt_d.get(x, y, 0).is_finite()).count();
            if let Ok((mee, aae)) = flow2d_errors(u2, &g2, Some(&visible)) {
                fr.mee = Some(mee);
                fr.aae_2d = Some(aae);
            }
        }
        let refined = |n: &str| read_flo(est.join("refined").join(format!("{n}_{}.flo", frame_name(t))));
        let truth = |n: &str| read_flo(gt_path(n, t, "flo"));
        if let (Ok(e1), Ok(e2), Ok(e3), Ok(g1), Ok(g3)) = (refined("u1"), refined("u2"), refined("u3"), truth("u1"), truth("u3")) {
            let occ_all = read_mask_pgm(gt_path("occall", t, "pgm")).unwrap_or_else(|_| occ.clone());
            let e = SceneFlowTuples::from_flows(&e1, &e2, &e3).map_err(|e| err(e.to_string()))?;
            let g = SceneFlowTuples::from_flows(&g1, &g2, &g3).map_err(|e| err(e.to_string()))?;
            fr.rmse = rmse_sceneflow(&e, &g, Some(&occ_all)).ok();
            fr.aae = aae_sceneflow(&e, &g, Some(&occ_all)).ok();
        }
        report.frames.push(fr);
    }
    report.write(est.join("report.json"), est.join("report.csv")).map_err(|e| err(e.to_string()))?;
    Ok(report)
}
