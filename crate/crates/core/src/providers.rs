//! Detection and classification sources.
//!
//! Built-in classical providers (Hough wheels, HOG+SVM classes) and
//! file-based providers that replay the output of external models.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::SvmModel;
use crate::geom::{BBox, Detection, Label, RimClass, NUM_RIM_CLASSES};
use crate::hough::{circle_to_detection, detect_circles, suppress_nested, HoughConfig};
use crate::image::Image;
use crate::imgproc::{downscale, gaussian_blur, to_grayscale};
use crate::tracking::Camera;

pub const DET_SCHEMA: &str = "rim-inspect/det-v1";
pub const CLS_SCHEMA: &str = "rim-inspect/cls-v1";

/// Reads a JSON-lines file; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push((i + 1, v));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        let s = serde_json::to_string(&r).map_err(|e| Error::Internal(e.to_string()))?;
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Source of scored boxes for one frame.
pub trait DetectionSource: Send + Sync {
    /// `image` is `None` when the frame was not decoded; image-based
    /// sources then fail.
    fn detect(&self, frame: usize, image: Option<&Image>, label: Label) -> Result<Vec<Detection>>;
}

/// Wheel detector: downscale, blur, circle Hough, then nested suppression
/// (the tire circle is kept over the rim, hub and spoke circles inside it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoughWheelDetector {
    pub downscale: usize,
    pub blur_sigma: f64,
    pub hough: HoughConfig,
}

impl Default for HoughWheelDetector {
    fn default() -> Self {
        Self {
            downscale: 2,
            blur_sigma: 1.5,
            hough: HoughConfig::default(),
        }
    }
}

impl HoughWheelDetector {
    pub fn detect_wheels(&self, frame: usize, image: &Image) -> Result<Vec<Detection>> {
        let gray = to_grayscale(image);
        let small = downscale(&gray, self.downscale.max(1))?;
        let blurred = if self.blur_sigma > 0.0 {
            gaussian_blur(&small, self.blur_sigma)?
        } else {
            small
        };
        let circles = detect_circles(&blurred, &self.hough)?;
        let kept = suppress_nested(&circles);
        kept.iter()
            .map(|c| circle_to_detection(frame, &remap(c, self.downscale.max(1)), 1.0))
            .collect()
    }
}

/// Circle in downscaled pixel-center coordinates mapped to full resolution.
fn remap(c: &crate::geom::Circle, factor: usize) -> crate::geom::Circle {
    let f = factor as f64;
    let shift = (f - 1.0) / 2.0;
    crate::geom::Circle {
        cx: c.cx * f + shift,
        cy: c.cy * f + shift,
        r: c.r * f,
        score: c.score,
    }
}

impl DetectionSource for HoughWheelDetector {
    fn detect(&self, frame: usize, image: Option<&Image>, label: Label) -> Result<Vec<Detection>> {
        let image = image.ok_or_else(|| Error::invalid("the Hough provider needs the frame image"))?;
        match label {
            Label::Wheel => self.detect_wheels(frame, image),
            other => Err(Error::Config(format!(
                "the built-in Hough provider detects wheels, not {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DetLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    frame: usize,
    label: String,
    bbox: [f64; 4],
    score: f64,
}

/// Detections replayed from a JSON-lines file, indexed by (frame, label).
#[derive(Debug, Clone, Default)]
pub struct ExternalDetections {
    pub path: PathBuf,
    index: HashMap<(usize, Label), Vec<Detection>>,
}

impl ExternalDetections {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut index: HashMap<(usize, Label), Vec<Detection>> = HashMap::new();
        for (line, d) in read_jsonl::<DetLine>(path)? {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if let Some(s) = &d.schema {
                if s != DET_SCHEMA {
                    return Err(err(format!("unsupported schema '{s}'")));
                }
            }
            let label: Label = d.label.parse().map_err(|e: Error| err(e.to_string()))?;
            let bbox = BBox::try_from(d.bbox).map_err(|e| err(e.to_string()))?;
            let det = Detection::new(d.frame, label, bbox, d.score).map_err(|e| err(e.to_string()))?;
            index.entry((d.frame, label)).or_default().push(det);
        }
        Ok(Self {
            path: path.to_path_buf(),
            index,
        })
    }

    pub fn get(&self, frame: usize, label: Label) -> &[Detection] {
        self.index.get(&(frame, label)).map_or(&[], Vec::as_slice)
    }

    /// Every detection, ordered by frame then label then file order.
    pub fn all(&self) -> Vec<Detection> {
        let mut keys: Vec<&(usize, Label)> = self.index.keys().collect();
        keys.sort();
        keys.into_iter().flat_map(|k| self.index[k].iter().copied()).collect()
    }
}

impl DetectionSource for ExternalDetections {
    fn detect(&self, frame: usize, _image: Option<&Image>, label: Label) -> Result<Vec<Detection>> {
        Ok(self.get(frame, label).to_vec())
    }
}

/// Writes detections in the format read by [`ExternalDetections`].
pub fn write_detections(path: &Path, dets: &[Detection]) -> Result<()> {
    write_jsonl(
        path,
        dets.iter().map(|d| DetLine {
            schema: Some(DET_SCHEMA.into()),
            frame: d.frame,
            label: d.label.to_string(),
            bbox: d.bbox.into(),
            score: d.score,
        }),
    )
}

/// Boxes must lie within the frame grown by 10 % on every side.
pub fn check_frame_bounds(det: &Detection, width: usize, height: usize) -> Result<()> {
    let (mx, my) = (0.1 * width as f64, 0.1 * height as f64);
    let b = &det.bbox;
    if b.x() < -mx || b.y() < -my || b.right() > width as f64 + mx || b.bottom() > height as f64 + my {
        return Err(Error::invalid(format!(
            "frame {}: {} box {:?} outside the {}x{} frame",
            det.frame,
            det.label,
            <[f64; 4]>::from(*b),
            width,
            height
        )));
    }
    Ok(())
}

/// Lookup key for class scores.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassKey {
    pub frame: usize,
    pub track: u64,
    pub camera: Camera,
    pub crop: Option<String>,
}

/// Source of per-class scores (22 values, one per class id).
pub trait ClassSource: Send + Sync {
    fn scores(&self, key: &ClassKey, crop: &Image) -> Result<Option<Vec<f64>>>;
}

/// Class with the highest score; ties go to the smaller id.
pub fn argmax_class(scores: &[f64]) -> Result<RimClass> {
    if scores.len() != NUM_RIM_CLASSES {
        return Err(Error::invalid(format!(
            "expected {NUM_RIM_CLASSES} class scores, got {}",
            scores.len()
        )));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    RimClass::new(best as u8)
}

/// HOG + linear SVM on the gray crop. Classes the model never saw get the
/// lowest margin minus one, so they never win.
#[derive(Debug, Clone)]
pub struct SvmClassifier {
    pub model: SvmModel,
}

impl SvmClassifier {
    pub fn full_scores(&self, crop: &Image) -> Result<Vec<f64>> {
        let gray = to_grayscale(crop);
        let (_, margins) = self.model.classify_crop(&gray)?;
        let floor = margins.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
        let mut scores = vec![floor; NUM_RIM_CLASSES];
        for (c, m) in self.model.classes.iter().zip(margins) {
            scores[c.id() as usize] = m;
        }
        Ok(scores)
    }
}

impl ClassSource for SvmClassifier {
    fn scores(&self, _key: &ClassKey, crop: &Image) -> Result<Option<Vec<f64>>> {
        self.full_scores(crop).map(Some)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClsLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    schema: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    track: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    camera: Option<Camera>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    crop: Option<String>,
    scores: Vec<f64>,
}

/// Class scores replayed from a JSON-lines file, keyed by
/// (frame, track, camera) or by crop file name. Duplicate keys keep the
/// last line and record a warning.
#[derive(Debug, Clone, Default)]
pub struct ExternalClasses {
    by_track: HashMap<(usize, u64, Camera), Vec<f64>>,
    by_crop: HashMap<String, Vec<f64>>,
    pub warnings: Vec<String>,
}

impl ExternalClasses {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut out = Self::default();
        for (line, c) in read_jsonl::<ClsLine>(path)? {
            let err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if let Some(s) = &c.schema {
                if s != CLS_SCHEMA {
                    return Err(err(format!("unsupported schema '{s}'")));
                }
            }
            if c.scores.len() != NUM_RIM_CLASSES {
                return Err(err(format!(
                    "expected {NUM_RIM_CLASSES} scores, got {}",
                    c.scores.len()
                )));
            }
            if c.scores.iter().any(|v| !v.is_finite()) {
                return Err(err("scores must be finite".into()));
            }
            let replaced = match (&c.crop, c.frame, c.track) {
                (Some(name), _, _) => out.by_crop.insert(name.clone(), c.scores).is_some(),
                (None, Some(f), Some(t)) => out
                    .by_track
                    .insert((f, t, c.camera.unwrap_or(Camera::A)), c.scores)
                    .is_some(),
                _ => return Err(err("line needs either 'crop' or 'frame' and 'track'".into())),
            };
            if replaced {
                let msg = format!("{}:{line}: duplicate key, later line wins", path.display());
                log::warn!("{msg}");
                out.warnings.push(msg);
            }
        }
        Ok(out)
    }

    pub fn get(&self, key: &ClassKey) -> Option<&Vec<f64>> {
        key.crop
            .as_ref()
            .and_then(|c| self.by_crop.get(c))
            .or_else(|| self.by_track.get(&(key.frame, key.track, key.camera)))
    }

    pub fn len(&self) -> usize {
        self.by_track.len() + self.by_crop.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ClassSource for ExternalClasses {
    fn scores(&self, key: &ClassKey, _crop: &Image) -> Result<Option<Vec<f64>>> {
        Ok(self.get(key).cloned())
    }
}

/// One class-score line keyed by frame and track.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassRecord {
    pub frame: usize,
    pub track: u64,
    pub camera: Camera,
    pub scores: Vec<f64>,
}

pub fn write_classes(path: &Path, rows: &[ClassRecord]) -> Result<()> {
    write_jsonl(
        path,
        rows.iter().map(|r| ClsLine {
            schema: Some(CLS_SCHEMA.into()),
            frame: Some(r.frame),
            track: Some(r.track),
            camera: Some(r.camera),
            crop: None,
            scores: r.scores.clone(),
        }),
    )
}
