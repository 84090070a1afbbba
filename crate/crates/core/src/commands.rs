//! Dataset-level operations behind the CLI: synthetic fixture writers,
//! HOG+SVM training on a class-directory dataset, detection evaluation.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, evaluate_label, load_yolo_dir, Confusion, DetectionReport, Interpolation, YoloClassMap};
use crate::features::{hog_dims, hog_features, svm_predict, FeatureSpace, HogConfig, HogReportRow, SvmModel, SvmParams};
use crate::geom::{BBox, Detection, Label, RimClass, NUM_RIM_CLASSES};
use crate::image::Image;
use crate::imgproc::{crop_square, to_grayscale};
use crate::pipeline::{list_images, ClassProvider, PipelineConfig, SvmTrainConfig};
use crate::providers::{write_detections, ExternalDetections};
use crate::synth::{render_crop_set, render_scene_set, CarPass, CropSetSpec, SceneSetSpec};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub const CARS_FILE: &str = "cars.jsonl";
pub const CONFIG_FILE: &str = "pipeline.toml";

/// Writes a two-camera car pass: `camera_a/`, `camera_b/`, car boxes from
/// the ground truth (clipped to the frame, as a detector would report
/// them), `truth.json` and a ready-to-run `pipeline.toml`.
pub fn write_car_pass(pass: &CarPass, dir: &Path, svm_model: Option<&Path>) -> Result<PipelineConfig> {
    let (a, b, truth) = pass.render()?;
    for (sub, frames) in [("camera_a", &a), ("camera_b", &b)] {
        let d = dir.join(sub);
        create_dir(&d)?;
        for (i, img) in frames.iter().enumerate() {
            img.save(d.join(format!("frame_{i:05}.png")))?;
        }
    }
    let (w, h) = (pass.width as f64, pass.height as f64);
    let cars: Vec<Detection> = truth
        .camera_a
        .iter()
        .filter_map(|f| {
            let b = f.car?.clip(w, h)?;
            Detection::new(f.frame, Label::Car, b, 1.0).ok()
        })
        .collect();
    write_detections(&dir.join(CARS_FILE), &cars)?;
    write_json(&dir.join("truth.json"), &truth)?;

    let mut cfg = PipelineConfig::default();
    cfg.seed = pass.seed;
    cfg.input.camera_a = Some("camera_a".into());
    cfg.input.camera_b = Some("camera_b".into());
    cfg.providers.detections = Some(CARS_FILE.into());
    match svm_model {
        Some(m) => {
            cfg.providers.classes = ClassProvider::Svm;
            cfg.providers.svm_model = Some(m.to_path_buf());
        }
        None => cfg.providers.classes = ClassProvider::None,
    }
    cfg.output.dir = "out".into();
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml_string()?).map_err(|e| Error::io(dir, e))?;
    let mut resolved = cfg;
    resolved.input.camera_a = Some(dir.join("camera_a"));
    resolved.input.camera_b = Some(dir.join("camera_b"));
    resolved.providers.detections = Some(dir.join(CARS_FILE));
    resolved.output.dir = dir.join("out");
    Ok(resolved)
}

/// Writes a labeled crop set as class-named subdirectories (`C01/00000.png`).
pub fn write_crop_set(spec: &CropSetSpec, dir: &Path) -> Result<usize> {
    let set = render_crop_set(spec)?;
    let mut counters = [0usize; NUM_RIM_CLASSES];
    for (img, class) in &set {
        let d = dir.join(class.to_string());
        create_dir(&d)?;
        let n = &mut counters[class.id() as usize];
        img.save(d.join(format!("{:05}.png", *n)))?;
        *n += 1;
    }
    Ok(set.len())
}

/// Writes still wheel scenes as `images/NNNNN.png` with YOLO labels in
/// `labels/NNNNN.txt` (class 1 = wheel) and the full truth in `truth.json`.
pub fn write_scene_set(spec: &SceneSetSpec, dir: &Path) -> Result<usize> {
    let set = render_scene_set(spec)?;
    let (images, labels) = (dir.join("images"), dir.join("labels"));
    create_dir(&images)?;
    create_dir(&labels)?;
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut truths = Vec::with_capacity(set.len());
    for (i, (img, truth)) in set.iter().enumerate() {
        img.save(images.join(format!("{i:05}.png")))?;
        let mut text = String::new();
        for wt in &truth.wheels {
            let (cx, cy) = wt.bbox.center();
            text.push_str(&format!(
                "1 {:.6} {:.6} {:.6} {:.6}\n",
                cx / w,
                cy / h,
                wt.bbox.w() / w,
                wt.bbox.h() / h
            ));
        }
        let p = labels.join(format!("{i:05}.txt"));
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        truths.push(truth);
    }
    write_json(&dir.join("truth.json"), &truths)?;
    Ok(set.len())
}

/// Class id of a dataset directory: the trailing number of its name
/// (`C05`, `class_5`, `05`).
pub fn class_from_dir_name(name: &str) -> Option<RimClass> {
    let digits: String = name.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    let digits: String = digits.chars().rev().collect();
    digits.parse::<u8>().ok().and_then(|id| RimClass::new(id).ok())
}

/// Images of a class-directory dataset. Directories whose names carry no
/// valid class number are numbered 1, 2, ... in sorted order instead.
pub fn scan_class_dataset(dir: &Path) -> Result<Vec<(PathBuf, RimClass)>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let names: Vec<String> = dirs
        .iter()
        .map(|d| d.file_name().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let parsed: Vec<Option<RimClass>> = names.iter().map(|n| class_from_dir_name(n)).collect();
    let ids: Vec<RimClass> = if parsed.iter().all(Option::is_some) {
        parsed.into_iter().flatten().collect()
    } else {
        if dirs.len() >= NUM_RIM_CLASSES {
            return Err(Error::invalid(format!(
                "{} class directories exceed the {} rim designs",
                dirs.len(),
                NUM_RIM_CLASSES - 1
            )));
        }
        (1..=dirs.len()).map(|i| RimClass::new(i as u8).expect("checked")).collect()
    };
    let mut out = Vec::new();
    for (d, c) in dirs.iter().zip(ids) {
        out.extend(list_images(d)?.into_iter().map(|p| (p, c)));
    }
    Ok(out)
}

/// Square gray crop of the whole image at `side`; a no-op for gray images
/// already of that size.
pub fn normalize_crop(img: &Image, side: usize) -> Result<Image> {
    let gray = to_grayscale(img);
    if gray.width() == side && gray.height() == side {
        return Ok(gray);
    }
    let full = BBox::new(0.0, 0.0, gray.width() as f64, gray.height() as f64)?;
    crop_square(&gray, &full, side)
}

/// Accuracy report of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub row: HogReportRow,
    pub train_samples: usize,
    pub test_samples: usize,
    pub classes: Vec<RimClass>,
    pub confusion: Confusion,
}

/// Per-class seeded hold-out split: `ceil(n * fraction)` test samples from
/// every class with at least two samples.
pub fn holdout_split(labels: &[RimClass], fraction: f64, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_test = vec![false; labels.len()];
    let mut classes: Vec<RimClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    for c in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.len() < 2 {
            continue;
        }
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).ceil() as usize).clamp(1, idx.len() - 1);
        for &i in &idx[..k] {
            is_test[i] = true;
        }
    }
    is_test
}

/// Trains HOG+SVM on gray `side x side` crops and scores the held-out part.
pub fn train_hog_svm(
    crops: &[(Image, RimClass)],
    cfg: &SvmTrainConfig,
    side: usize,
    seed: u64,
) -> Result<(SvmModel, TrainReport)> {
    let hog = HogConfig::new(cfg.orientations, cfg.pixels_per_cell);
    hog.validate()?;
    hog_dims(&hog, side)?;
    let feats: Vec<Vec<f64>> = crops
        .par_iter()
        .map(|(img, _)| hog_features(&normalize_crop(img, side)?, &hog))
        .collect::<Result<_>>()?;
    let labels: Vec<RimClass> = crops.iter().map(|(_, c)| *c).collect();
    train_on_features(feats, labels, hog, side, cfg, seed)
}

fn train_on_features(
    feats: Vec<Vec<f64>>,
    labels: Vec<RimClass>,
    hog: HogConfig,
    side: usize,
    cfg: &SvmTrainConfig,
    seed: u64,
) -> Result<(SvmModel, TrainReport)> {
    let mut classes = labels.clone();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid(format!(
            "training needs at least 2 classes, found {}",
            classes.len()
        )));
    }
    let is_test = holdout_split(&labels, cfg.test_fraction, seed);
    let pick = |test: bool| -> (Vec<Vec<f64>>, Vec<RimClass>) {
        feats
            .iter()
            .zip(&labels)
            .zip(&is_test)
            .filter(|(_, &t)| t == test)
            .map(|((f, l), _)| (f.clone(), *l))
            .unzip()
    };
    let (train_x, train_y) = pick(false);
    let (test_x, test_y) = pick(true);
    let params = SvmParams {
        c: cfg.c,
        epochs: cfg.epochs,
        seed,
    };
    let model = crate::features::svm_train(&train_x, &train_y, &params, FeatureSpace::Hog { hog, side })?;
    let predict = |xs: &[Vec<f64>]| -> Result<Vec<RimClass>> {
        xs.par_iter().map(|x| svm_predict(&model, x).map(|(c, _)| c)).collect()
    };
    let train_acc = confusion_matrix(&predict(&train_x)?, &train_y)?.accuracy;
    let confusion = confusion_matrix(&predict(&test_x)?, &test_y)?;
    let report = TrainReport {
        row: HogReportRow {
            orientations: hog.orientations,
            pixels_per_cell: hog.cell,
            train_accuracy: train_acc,
            test_accuracy: confusion.accuracy,
            features: hog_dims(&hog, side)?,
        },
        train_samples: train_x.len(),
        test_samples: test_x.len(),
        classes,
        confusion,
    };
    Ok((model, report))
}

/// Trains on a class-directory dataset. Images are loaded and described
/// in parallel and never held all at once.
pub fn train_svm_dir(dir: &Path, cfg: &SvmTrainConfig, side: usize, seed: u64) -> Result<(SvmModel, TrainReport)> {
    let files = scan_class_dataset(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no images under {}", dir.display())));
    }
    let hog = HogConfig::new(cfg.orientations, cfg.pixels_per_cell);
    hog.validate()?;
    hog_dims(&hog, side)?;
    let feats: Vec<Vec<f64>> = files
        .par_iter()
        .map(|(p, _)| hog_features(&normalize_crop(&Image::load(p)?, side)?, &hog))
        .collect::<Result<_>>()?;
    let labels = files.iter().map(|(_, c)| *c).collect();
    train_on_features(feats, labels, hog, side, cfg, seed)
}

/// One `train-svm` table row in plain text.
pub fn format_report_row(r: &HogReportRow) -> String {
    format!(
        "orientations={} pixels_per_cell={} accuracy={:.4} train_accuracy={:.4} features={}",
        r.orientations, r.pixels_per_cell, r.test_accuracy, r.train_accuracy, r.features
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub interpolation: Interpolation,
    /// Image size for YOLO denormalization when images are not beside the labels.
    pub image_size: Option<(usize, usize)>,
}

/// Scores a detection file against a directory of YOLO annotations. Frame
/// `i` is the `i`-th annotation file in sorted order.
pub fn eval_detections(dets_path: &Path, gt_dir: &Path, label: Label, opts: EvalOptions) -> Result<DetectionReport> {
    let gts = load_yolo_dir(gt_dir, opts.image_size, &YoloClassMap::default())?;
    let dets = ExternalDetections::load(dets_path)?.all();
    evaluate_label(&dets, &gts, label, opts.interpolation)
}
