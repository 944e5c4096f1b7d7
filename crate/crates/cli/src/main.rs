use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use wideflow::geometry::load_calibration;
use wideflow::imagecore::{read_flo, read_image, read_mask_pgm, write_flo, write_mask_pgm, FlowField};
use wideflow::matcher::{match_bidirectional, MatchKind};
use wideflow::occlusion::{diffusion_fill, forward_backward_mask, laplacian_fill, morphological_close};
use wideflow::pipeline::{eval_command, run_pipeline, PipelineConfig, StageToggles};
use wideflow::sceneflow::{init_u3, refine, triangulate_scene_flow, write_depth_pfm, write_ply, FourFrameFlows, SceneFlowProblem};
use wideflow::synthetic::{make_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(name = "wideflow", version, about = "Wide-baseline scene flow from two moving cameras")]
struct Cli {
    /// Pipeline config (JSON); its parameter blocks also apply to single stages.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated subset of match,occlusion,fill,sceneflow,eval.
    #[arg(long, global = true)]
    stages: Option<String>,
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Stereo,
    OpticalFlow,
}

#[derive(Clone, Copy, ValueEnum)]
enum FillMethod {
    Laplacian,
    Diffusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scene {
    Plane,
    TwoLayer,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic dataset with ground truth and a pipeline.json for it.
    MakeSynthetic {
        /// Scene description (JSON); overrides --scene and the size flags.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "two-layer")]
        scene: Scene,
        #[arg(long, default_value_t = 96)]
        width: usize,
        #[arg(long, default_value_t = 72)]
        height: usize,
        #[arg(long, default_value_t = 2)]
        frames: usize,
    },
    /// Bidirectional matching of two images; writes forward.flo and backward.flo.
    Match {
        #[arg(long, value_enum)]
        kind: Kind,
        img1: PathBuf,
        img2: PathBuf,
        /// Needed for stereo.
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        frame: usize,
    },
    /// Forward-backward occlusion mask.
    Occlusion {
        forward: PathBuf,
        backward: PathBuf,
    },
    /// Fill the masked pixels of a flow field.
    Fill {
        flow: PathBuf,
        mask: PathBuf,
        image: PathBuf,
        #[arg(long, value_enum, default_value = "laplacian")]
        method: FillMethod,
    },
    /// Refine four-frame flows and triangulate them.
    Sceneflow {
        /// View 1 at t, view 2 at t, view 1 at t+1, view 2 at t+1.
        #[arg(num_args = 4, required = true)]
        images: Vec<PathBuf>,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, default_value_t = 0)]
        frame: usize,
        #[arg(long)]
        u1: PathBuf,
        #[arg(long)]
        u2: PathBuf,
        /// Initial u3; alternatively `--flow2` builds it from the view-2 flow.
        #[arg(long)]
        u3: Option<PathBuf>,
        #[arg(long)]
        flow2: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Score a pipeline output directory against ground truth.
    Eval {
        estimate: PathBuf,
        ground_truth: PathBuf,
    },
    /// Run every enabled stage on a sequence.
    Pipeline,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(j) = cli.jobs {
        c.jobs = j.max(1);
    }
    if let Some(s) = &cli.stages {
        c.stages = StageToggles::from_list(s)?;
    }
    if let Some(o) = &cli.output {
        c.output = o.clone();
    }
    Ok(c)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let d = cli.output.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
    Ok(d)
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).with_context(|| path.display().to_string())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(&cli)?;
    match &cli.cmd {
        Cmd::MakeSynthetic { spec, scene, width, height, frames } => {
            let mut s = match spec {
                Some(p) => serde_json::from_str::<SyntheticSpec>(&std::fs::read_to_string(p)?).with_context(|| p.display().to_string())?,
                None => {
                    let seed = cli.seed.unwrap_or(0);
                    match scene {
                        Scene::Plane => SyntheticSpec::plane(*width, *height, 8.0, 0.4, seed),
                        Scene::TwoLayer => SyntheticSpec::two_layer(*width, *height, seed),
                    }
                }
            };
            if spec.is_none() {
                s.frames = *frames;
            }
            let dir = out_dir(&cli)?;
            make_synthetic(&s)?.write(&dir)?;
            write_json(&dir.join("spec.json"), &s)?;
            let pc = PipelineConfig { ground_truth: Some("gt".into()), seed: s.seed, ..PipelineConfig::default() };
            write_json(&dir.join("pipeline.json"), &pc)?;
            log::info!("wrote {} steps to {}", s.frames, dir.display());
        }
        Cmd::Match { kind, img1, img2, calibration, frame } => {
            let (a, b) = (read_image(img1)?.to_rgb(), read_image(img2)?.to_rgb());
            let kind = match kind {
                Kind::Stereo => MatchKind::Stereo,
                Kind::OpticalFlow => MatchKind::OpticalFlow,
            };
            let f = match (kind, calibration) {
                (MatchKind::Stereo, Some(c)) => {
                    let rigs = load_calibration(c, None)?;
                    Some(rigs.get(*frame).with_context(|| format!("calibration has no frame {frame}"))?.f)
                }
                (MatchKind::Stereo, None) => bail!("stereo matching needs --calibration"),
                _ => None,
            };
            let mut params = wideflow::matcher::MatchParams { seed: cfg.seed, parallel: cfg.jobs > 1, ..Default::default() };
            let k = if matches!(kind, MatchKind::Stereo) { &cfg.matcher.stereo } else { &cfg.matcher.optical_flow };
            params.particles = cfg.matcher.particles;
            params.search_range = k.search_range;
            params.schedule = k.schedule.clone();
            params.daisy = k.daisy;
            params.consistency_threshold = cfg.matcher.consistency_threshold;
            params.max_colour_samples = cfg.matcher.max_colour_samples;
            let m = match_bidirectional(kind, &a, &b, f.as_ref(), None, &params)?;
            let dir = out_dir(&cli)?;
            write_flo(dir.join("forward.flo"), &m.forward)?;
            write_flo(dir.join("backward.flo"), &m.backward)?;
            let t = m.transform_forward;
            let colour = serde_json::json!({
                "A": t.a_mat.transpose().as_slice(),
                "a": t.offset.as_slice(),
                "energy_forward": m.energy_forward,
                "energy_backward": m.energy_backward,
            });
            write_json(&dir.join("match.json"), &colour)?;
        }
        Cmd::Occlusion { forward, backward } => {
            let m = forward_backward_mask(&read_flo(forward)?, &read_flo(backward)?, cfg.fill.fb_threshold)?;
            let m = morphological_close(&m, cfg.fill.closing_radius);
            let dir = out_dir(&cli)?;
            write_mask_pgm(dir.join("occlusion.pgm"), &m)?;
            log::info!("{} of {} pixels occluded", m.count(), m.width() * m.height());
        }
        Cmd::Fill { flow, mask, image, method } => {
            let (f, m) = (read_flo(flow)?, read_mask_pgm(mask)?);
            let filled = match method {
                FillMethod::Laplacian => laplacian_fill(&f, &m, &read_image(image)?.to_rgb(), &cfg.fill)?,
                FillMethod::Diffusion => diffusion_fill(&f, &m)?,
            };
            write_flo(out_dir(&cli)?.join("filled.flo"), &filled)?;
        }
        Cmd::Sceneflow { images, calibration, frame, u1, u2, u3, flow2, mask } => {
            let imgs = images.iter().map(|p| Ok(read_image(p)?.to_rgb())).collect::<Result<Vec<_>>>()?;
            let rigs = load_calibration(calibration, None)?;
            let (rt, rn) = (rigs.get(*frame), rigs.get(frame + 1));
            let (Some(rt), Some(rn)) = (rt, rn) else { bail!("calibration needs frames {frame} and {}", frame + 1) };
            let (u1, u2) = (read_flo(u1)?, read_flo(u2)?);
            let u3 = match (u3, flow2) {
                (Some(p), _) => read_flo(p)?,
                (None, Some(p)) => init_u3(&u1, &u2, &read_flo(p)?),
                (None, None) => FlowField::zeros(u1.width(), u1.height()),
            };
            let u3 = FlowField::from_fn(u3.width(), u3.height(), |x, y| if u3.is_valid(x, y) { u3.get(x, y) } else { [0.0, 0.0] });
            let occ = mask.as_ref().map(read_mask_pgm).transpose()?;
            let problem = SceneFlowProblem {
                view1_t: &imgs[0],
                view2_t: &imgs[1],
                view1_t1: &imgs[2],
                view2_t1: &imgs[3],
                f_t: rt.f,
                f_t1: rn.f,
                occlusion: occ.as_ref(),
                transform: Default::default(),
            };
            let (flows, report) = refine(&FourFrameFlows { u1, u2, u3 }, &problem, &cfg.sceneflow)?;
            let dir = out_dir(&cli)?;
            write_flo(dir.join("u1.flo"), &flows.u1)?;
            write_flo(dir.join("u2.flo"), &flows.u2)?;
            write_flo(dir.join("u3.flo"), &flows.u3)?;
            let sf = triangulate_scene_flow(&flows, rt, rn, occ.as_ref());
            write_ply(dir.join("sceneflow.ply"), &sf, Some(&imgs[0]))?;
            write_depth_pfm(dir.join("depth.pfm"), &sf)?;
            log::info!("energy {:.6e} -> {:.6e}", report.initial_energy, report.final_energy);
        }
        Cmd::Eval { estimate, ground_truth } => {
            let r = eval_command(estimate, ground_truth)?;
            print!("{}", r.to_csv());
        }
        Cmd::Pipeline => {
            if cli.config.is_none() {
                bail!("pipeline needs --config");
            }
            let out = run_pipeline(&cfg)?;
            if let Some(r) = out.report {
                print!("{}", r.to_csv());
            }
        }
    }
    Ok(())
}
