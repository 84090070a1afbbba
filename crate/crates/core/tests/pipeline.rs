use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rim_inspect::commands::{train_hog_svm, write_car_pass};
use rim_inspect::pipeline::{run_pipeline, verdicts_jsonl, write_outputs, PipelineConfig, SvmTrainConfig, WheelProvider};
use rim_inspect::synth::{render_crop_set, CarPass, CropSetSpec, SpokePattern};
use rim_inspect::tracking::{Position, Verdict};

/// One small model shared by every test in this file.
fn model() -> &'static Path {
    static MODEL: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = MODEL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let crops = render_crop_set(&CropSetSpec::default()).unwrap();
        let (model, _) = train_hog_svm(&crops, &SvmTrainConfig::default(), 256, 0).unwrap();
        let path = dir.path().join("model.bin");
        model.save(&path).unwrap();
        (dir, path)
    });
    path
}

fn scenario(pass: &CarPass) -> (tempfile::TempDir, PipelineConfig) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_car_pass(pass, dir.path(), Some(model())).unwrap();
    (dir, cfg)
}

#[test]
fn matching_car_passes() {
    let (_dir, cfg) = scenario(&CarPass::default());
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.verdicts.len(), 1);
    let v = &out.verdicts[0];
    assert_eq!(v.verdict, Verdict::Pass, "{v:?}");
    for w in &v.wheels {
        let d = w.diameter_mm.unwrap();
        assert!((d - 430.0).abs() / 430.0 < 0.01, "{:?} {d}", w.position);
        assert_eq!(w.class.unwrap(), SpokePattern::Spokes5.class());
    }
    assert_eq!(out.summary.pass, 1);
    assert_eq!(out.summary.frames, 30);
}

#[test]
fn odd_rear_right_rim_fails() {
    let mut pass = CarPass::default();
    pass.patterns[3] = SpokePattern::Spokes7;
    let (_dir, cfg) = scenario(&pass);
    let out = run_pipeline(&cfg).unwrap();
    let v = &out.verdicts[0];
    assert_eq!(v.verdict, Verdict::Fail);
    assert_eq!(v.reasons[0].code, "class_mismatch");
    assert_eq!(v.reasons[0].positions, vec![Position::RR]);
}

#[test]
fn oversized_rim_fails_on_size() {
    let mut pass = CarPass::default();
    pass.rim_mm[0] = 480.0;
    let (_dir, cfg) = scenario(&pass);
    let out = run_pipeline(&cfg).unwrap();
    let v = &out.verdicts[0];
    assert_eq!(v.verdict, Verdict::Fail, "{v:?}");
    assert!(v.reasons.iter().any(|r| r.code == "size_mismatch"), "{v:?}");
}

#[test]
fn missing_far_camera_is_inconclusive() {
    let (_dir, mut cfg) = scenario(&CarPass::default());
    cfg.input.camera_b = None;
    let out = run_pipeline(&cfg).unwrap();
    assert_eq!(out.verdicts.len(), 1);
    assert_eq!(out.verdicts[0].verdict, Verdict::Inconclusive);
    assert_eq!(out.verdicts[0].reasons[0].code, "wheels_missing");
    assert_eq!(out.summary.inconclusive, 1);
}

#[test]
fn hough_detections_replayed_from_files_give_the_same_verdicts() {
    let (dir, cfg) = scenario(&CarPass::default());
    let first = run_pipeline(&cfg).unwrap();
    write_outputs(&cfg, &first).unwrap();

    let mut replay = cfg.clone();
    replay.providers.wheels = WheelProvider::External;
    replay.providers.detections = Some(cfg.output.dir.join("detections.jsonl"));
    replay.providers.detections_b = Some(cfg.output.dir.join("detections_b.jsonl"));
    replay.output.dir = dir.path().join("replay");
    replay.validate().unwrap();
    let second = run_pipeline(&replay).unwrap();
    assert_eq!(second.detections, first.detections);
    assert_eq!(verdicts_jsonl(&second.verdicts).unwrap(), verdicts_jsonl(&first.verdicts).unwrap());
}

#[test]
fn written_config_loads_and_reruns_identically() {
    let (dir, cfg) = scenario(&CarPass::default());
    let loaded = PipelineConfig::load(dir.path().join("pipeline.toml")).unwrap();
    assert_eq!(loaded.input, cfg.input);
    let mut with_model = loaded.clone();
    with_model.providers.svm_model = Some(model().to_path_buf());
    let a = run_pipeline(&with_model).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert_eq!(verdicts_jsonl(&a.verdicts).unwrap(), verdicts_jsonl(&b.verdicts).unwrap());
}
