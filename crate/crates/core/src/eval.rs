//! Detection metrics (precision, recall, AP, mAP over IoU ranges) and
//! classification confusion matrices.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox, Detection, Label, RimClass, NUM_RIM_CLASSES};

/// Slack on the IoU comparison so that constructed boxes whose IoU equals a
/// threshold up to rounding still count.
const IOU_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frame: usize,
    pub label: Label,
    pub bbox: BBox,
}

/// Outcome of matching detections to ground truth at one IoU threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Scores in descending order.
    pub scores: Vec<f64>,
    /// True positive flag per detection, aligned with `scores`.
    pub tp: Vec<bool>,
    pub n_gt: usize,
    pub false_negatives: usize,
}

/// Detection indices sorted by descending score; equal scores keep input order.
fn score_order(dets: &[Detection]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    order
}

/// Greedy one-to-one matching in score order, per frame and label.
pub fn match_detections(dets: &[Detection], gts: &[GroundTruth], iou_t: f64) -> MatchResult {
    let mut by_key: BTreeMap<(usize, Label), Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_key.entry((g.frame, g.label)).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    let order = score_order(dets);
    let mut tp = Vec::with_capacity(dets.len());
    let mut scores = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(f64, usize)> = None;
        if let Some(cands) = by_key.get(&(d.frame, d.label)) {
            for &g in cands {
                if used[g] {
                    continue;
                }
                let v = iou(&d.bbox, &gts[g].bbox);
                if v + IOU_EPS >= iou_t && best.is_none_or(|(bv, _)| v > bv) {
                    best = Some((v, g));
                }
            }
        }
        if let Some((_, g)) = best {
            used[g] = true;
        }
        tp.push(best.is_some());
        scores.push(d.score);
    }
    let matched = used.iter().filter(|u| **u).count();
    MatchResult {
        scores,
        tp,
        n_gt: gts.len(),
        false_negatives: gts.len() - matched,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    #[default]
    AllPoint,
    ElevenPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    pub ap: f64,
}

/// Precision/recall curve in score order and its enveloped area.
/// Errors when `n_gt` is zero (AP undefined).
pub fn average_precision(tp: &[bool], n_gt: usize) -> Result<PrCurve> {
    average_precision_with(tp, n_gt, Interpolation::AllPoint)
}

pub fn average_precision_with(tp: &[bool], n_gt: usize, interp: Interpolation) -> Result<PrCurve> {
    if n_gt == 0 {
        return Err(Error::invalid("average precision is undefined without ground truth"));
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_gt as f64);
        precision.push(hits as f64 / (i + 1) as f64);
    }
    let mut env = precision.clone();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    let ap = match interp {
        Interpolation::AllPoint => {
            let mut prev = 0.0;
            let mut area = 0.0;
            for (r, p) in recall.iter().zip(&env) {
                area += (r - prev) * p;
                prev = *r;
            }
            area
        }
        Interpolation::ElevenPoint => {
            (0..=10)
                .map(|k| {
                    let r0 = k as f64 / 10.0;
                    recall
                        .iter()
                        .zip(&precision)
                        .filter(|(r, _)| **r + 1e-12 >= r0)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
    };
    Ok(PrCurve {
        recall,
        precision,
        ap,
    })
}

/// IoU thresholds `lo, lo+step, ..., hi`.
pub fn iou_thresholds(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(lo <= hi) || !(step > 0.0) || !(0.0..=1.0).contains(&lo) || hi > 1.0 {
        return Err(Error::invalid(format!(
            "bad IoU range {lo}..{hi} step {step}"
        )));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| lo + i as f64 * step).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub thresholds: Vec<f64>,
    pub aps: Vec<f64>,
    pub mean: f64,
}

/// Mean AP over an IoU threshold range.
pub fn map_range(
    dets: &[Detection],
    gts: &[GroundTruth],
    lo: f64,
    hi: f64,
    step: f64,
) -> Result<MapReport> {
    map_range_with(dets, gts, lo, hi, step, Interpolation::AllPoint)
}

pub fn map_range_with(
    dets: &[Detection],
    gts: &[GroundTruth],
    lo: f64,
    hi: f64,
    step: f64,
    interp: Interpolation,
) -> Result<MapReport> {
    let thresholds = iou_thresholds(lo, hi, step)?;
    let aps = thresholds
        .iter()
        .map(|&t| {
            let m = match_detections(dets, gts, t);
            average_precision_with(&m.tp, m.n_gt, interp).map(|c| c.ap)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = aps.iter().sum::<f64>() / aps.len() as f64;
    Ok(MapReport {
        thresholds,
        aps,
        mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub score_threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision and recall at the score cut that maximizes F1. Cuts fall only
/// between distinct scores.
pub fn best_f1(m: &MatchResult) -> OperatingPoint {
    let mut best = OperatingPoint {
        score_threshold: f64::INFINITY,
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    let mut hits = 0usize;
    for i in 0..m.tp.len() {
        hits += m.tp[i] as usize;
        if i + 1 < m.tp.len() && m.scores[i + 1] == m.scores[i] {
            continue;
        }
        let p = hits as f64 / (i + 1) as f64;
        let r = if m.n_gt == 0 { 0.0 } else { hits as f64 / m.n_gt as f64 };
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if f1 > best.f1 {
            best = OperatingPoint {
                score_threshold: m.scores[i],
                precision: p,
                recall: r,
                f1,
            };
        }
    }
    best
}

/// Per-label metrics with the columns of a detector comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub label: Label,
    pub detections: usize,
    pub ground_truth: usize,
    /// P and R are reported at the score threshold maximizing F1.
    pub operating_point: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub score_threshold: f64,
    #[serde(rename = "mAP@.5")]
    pub map50: f64,
    #[serde(rename = "mAP@.5:.95")]
    pub map50_95: f64,
    pub ap_per_threshold: Vec<(f64, f64)>,
    pub interpolation: Interpolation,
    pub curve: PrCurve,
}

pub fn evaluate_label(
    dets: &[Detection],
    gts: &[GroundTruth],
    label: Label,
    interp: Interpolation,
) -> Result<DetectionReport> {
    let dets: Vec<Detection> = dets.iter().filter(|d| d.label == label).copied().collect();
    let gts: Vec<GroundTruth> = gts.iter().filter(|g| g.label == label).copied().collect();
    if gts.is_empty() {
        return Err(Error::invalid(format!("no ground truth for label '{label}'")));
    }
    let m50 = match_detections(&dets, &gts, 0.5);
    let curve = average_precision_with(&m50.tp, m50.n_gt, interp)?;
    let op = best_f1(&m50);
    let range = map_range_with(&dets, &gts, 0.5, 0.95, 0.05, interp)?;
    Ok(DetectionReport {
        label,
        detections: dets.len(),
        ground_truth: gts.len(),
        operating_point: "best_f1".into(),
        precision: op.precision,
        recall: op.recall,
        f1: op.f1,
        score_threshold: op.score_threshold,
        map50: curve.ap,
        map50_95: range.mean,
        ap_per_threshold: range.thresholds.iter().copied().zip(range.aps).collect(),
        interpolation: interp,
        curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    /// `counts[truth][pred]`.
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
    pub correct: u64,
    pub accuracy: f64,
}

pub fn confusion_matrix(pred: &[RimClass], truth: &[RimClass]) -> Result<Confusion> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} labels",
            pred.len(),
            truth.len()
        )));
    }
    let mut counts = vec![vec![0u64; NUM_RIM_CLASSES]; NUM_RIM_CLASSES];
    for (p, t) in pred.iter().zip(truth) {
        counts[t.id() as usize][p.id() as usize] += 1;
    }
    let total = pred.len() as u64;
    let correct = (0..NUM_RIM_CLASSES).map(|i| counts[i][i]).sum();
    Ok(Confusion {
        counts,
        total,
        correct,
        accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
    })
}

/// Maps YOLO class indices to labels; default order car, wheel, bolt, rim.
#[derive(Debug, Clone, PartialEq)]
pub struct YoloClassMap(pub Vec<Label>);

impl Default for YoloClassMap {
    fn default() -> Self {
        Self(Label::ALL.to_vec())
    }
}

/// Parses one YOLO annotation file body (`class cx cy w h`, normalized).
pub fn parse_yolo(
    text: &str,
    path: &Path,
    frame: usize,
    size: (usize, usize),
    map: &YoloClassMap,
) -> Result<Vec<GroundTruth>> {
    let (w, h) = (size.0 as f64, size.1 as f64);
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 5 {
            return Err(err(format!("expected 5 fields, got {}", fields.len())));
        }
        let class: usize = fields[0]
            .parse()
            .map_err(|_| err(format!("bad class index '{}'", fields[0])))?;
        let label = *map
            .0
            .get(class)
            .ok_or_else(|| err(format!("class index {class} has no label")))?;
        let mut v = [0.0f64; 4];
        for (k, f) in fields[1..].iter().enumerate() {
            v[k] = f.parse().map_err(|_| err(format!("bad number '{f}'")))?;
            if !(0.0..=1.0).contains(&v[k]) {
                return Err(err(format!("value {f} outside [0, 1]")));
            }
        }
        let bbox = BBox::from_center(v[0] * w, v[1] * h, v[2] * w, v[3] * h)
            .map_err(|e| err(e.to_string()))?;
        out.push(GroundTruth { frame, label, bbox });
    }
    Ok(out)
}

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "pgm", "ppm"];

fn find_image(label_path: &Path) -> Option<PathBuf> {
    let stem = label_path.file_stem()?;
    let dir = label_path.parent()?;
    let mut dirs = vec![dir.to_path_buf()];
    if let Some(parent) = dir.parent() {
        dirs.push(parent.join("images"));
    }
    for d in dirs {
        for ext in IMAGE_EXTENSIONS {
            let p = d.join(stem).with_extension(ext);
            if p.is_file() {
                return Some(p);
            }
        }
    }
    None
}

/// Reads every `*.txt` annotation in `dir`. Frame indices follow the
/// lexicographic order of the file names. Image size comes from a same-stem
/// image next to the file (or in a sibling `images/` directory) unless
/// `image_size` is given.
pub fn load_yolo_dir(
    dir: &Path,
    image_size: Option<(usize, usize)>,
    map: &YoloClassMap,
) -> Result<Vec<GroundTruth>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "txt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!(
            "no YOLO annotation files in {}",
            dir.display()
        )));
    }
    let mut out = Vec::new();
    for (frame, f) in files.iter().enumerate() {
        let size = match image_size {
            Some(s) => s,
            None => {
                let img = find_image(f).ok_or_else(|| {
                    Error::invalid(format!(
                        "no image found for {}; pass an explicit image size",
                        f.display()
                    ))
                })?;
                crate::image::image_dimensions(img)?
            }
        };
        let text = std::fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        out.extend(parse_yolo(&text, f, frame, size, map)?);
    }
    Ok(out)
}
