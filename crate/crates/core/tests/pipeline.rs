use std::path::Path;

use wideflow::imagecore::write_flo;
use wideflow::metrics::Stage;
use wideflow::pipeline::{eval_command, run_pipeline, PipelineConfig, StageToggles};
use wideflow::synthetic::{frame_name, make_synthetic, SyntheticDataset, SyntheticSpec};

fn dataset(dir: &Path, w: usize, h: usize, seed: u64) -> SyntheticDataset {
    let ds = make_synthetic(&SyntheticSpec::two_layer(w, h, seed)).unwrap();
    ds.write(dir).unwrap();
    ds
}

#[test]
fn ground_truth_scores_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let ds = dataset(&data, 40, 30, 3);
    let est = tmp.path().join("est");
    for d in ["matcher", "refined"] {
        std::fs::create_dir_all(est.join(d)).unwrap();
    }
    let n = frame_name(0);
    write_flo(est.join(format!("matcher/u2_{n}.flo")), &ds.u2[0]).unwrap();
    write_flo(est.join(format!("refined/u2_{n}.flo")), &ds.u2[0]).unwrap();
    write_flo(est.join(format!("refined/u1_{n}.flo")), &ds.u1[0]).unwrap();
    write_flo(est.join(format!("refined/u3_{n}.flo")), &ds.u3[0]).unwrap();

    let r = eval_command(&est, &data.join("gt")).unwrap();
    assert_eq!(r.frames.len(), 1);
    let f = &r.frames[0];
    // ground-truth disparity is stored as f32
    let zero = |v: Option<f64>| v.is_some_and(|v| v.abs() < 1e-6);
    assert!(zero(f.mae_d(Stage::Matcher)) && zero(f.mae_d(Stage::Refined)), "{f:?}");
    assert_eq!(f.mae_d(Stage::Filled), None);
    assert!(zero(f.rmse) && zero(f.aae) && zero(f.mee), "{f:?}");
    assert!(f.pixels > 0);

    let csv = std::fs::read_to_string(est.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "frame,mae_d_matcher,mae_d_refined,rmse,aae,mee,aae_2d,pixels");
    assert_eq!(lines.count(), 1);
}

#[test]
fn skipped_fill_is_recorded_and_refinement_still_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, 48, 36, 5);
    let mut cfg = PipelineConfig::for_dataset(&data, &tmp.path().join("out"));
    cfg.stages = StageToggles::from_list("match,occlusion,sceneflow,eval").unwrap();
    let out = run_pipeline(&cfg).unwrap();

    assert!(out.manifest.stages_skipped.contains(&"fill"));
    assert!(!out.manifest.stages_run.contains(&"fill"));
    assert!(!cfg.output.join("filled").exists());
    let n = frame_name(0);
    for f in [format!("refined/u2_{n}.flo"), format!("refined/depth_{n}.pfm"), format!("refined/sceneflow_{n}.ply"), "manifest.json".into()] {
        assert!(cfg.output.join(&f).exists(), "{f}");
    }
    let r = out.report.expect("eval ran");
    assert!(r.frames.iter().all(|f| f.mae_d(Stage::Filled).is_none()));
    let refined = r.frames[0].mae_d(Stage::Refined).unwrap();
    assert!(refined < 1.0, "refined MAE_d {refined}");
}

#[test]
fn unknown_stage_is_rejected() {
    assert!(StageToggles::from_list("match,warp").is_err());
}
