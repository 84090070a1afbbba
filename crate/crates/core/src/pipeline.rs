//! Frame-sequence orchestration: detection, tracking, classification, size
//! measurement and per-car verdicts.
//!
//! Every step reads and writes a JSON-lines file, so the steps can run one
//! at a time (`detect`, `track`, `classify`, `fit`, then `inspect --from`)
//! and reproduce a single [`run_pipeline`] call exactly.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ellipsefit::{draw_overlay, measure_crop, SizeConfig};
use crate::error::{Error, Result};
use crate::features::SvmModel;
use crate::geom::{Detection, Ellipse, Label};
use crate::hough::HoughConfig;
use crate::image::{image_dimensions, Image};
use crate::imgproc::{crop_square, to_grayscale};
use crate::providers::{
    argmax_class, check_frame_bounds, read_jsonl, write_classes, write_detections, write_jsonl,
    ClassKey, ClassRecord, ClassSource, DetectionSource, ExternalClasses, ExternalDetections,
    HoughWheelDetector, SvmClassifier, CLS_SCHEMA,
};
use crate::tracking::{
    assemble_cars, inspect_car, Camera, FrameDetections, InspectionVerdict, Observation,
    TrackEvent, Tracker, TrackerConfig,
};

pub const VERDICT_SCHEMA: &str = "rim-inspect/verdict-v1";
pub const SUMMARY_SCHEMA: &str = "rim-inspect/summary-v1";

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const DETECTIONS_B_FILE: &str = "detections_b.jsonl";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const CLASSES_FILE: &str = "classes.jsonl";
pub const SIZES_FILE: &str = "sizes.jsonl";
pub const VERDICTS_FILE: &str = "verdicts.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const OVERLAY_DIR: &str = "overlays";

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "pgm", "ppm", "pnm"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Directory of camera-A frames (near side: FL, RL).
    pub camera_a: Option<PathBuf>,
    /// Directory of camera-B frames (far side: FR, RR).
    pub camera_b: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WheelProvider {
    #[default]
    Hough,
    External,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassProvider {
    #[default]
    Svm,
    External,
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub wheels: WheelProvider,
    /// Camera-A detections file: car boxes, and wheel boxes when
    /// `wheels = "external"`.
    pub detections: Option<PathBuf>,
    /// Camera-B wheel detections when `wheels = "external"`.
    pub detections_b: Option<PathBuf>,
    pub classes: ClassProvider,
    pub svm_model: Option<PathBuf>,
    pub class_scores: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Integer downscale factor before the wheel Hough transform.
    pub downscale: usize,
    pub blur_sigma: f64,
    /// Side of the square wheel crop fed to classification and fitting.
    pub crop_side: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            downscale: 2,
            blur_sigma: 1.5,
            crop_side: 256,
        }
    }
}

/// Parameters for `train-svm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmTrainConfig {
    pub orientations: usize,
    pub pixels_per_cell: usize,
    pub c: f64,
    pub epochs: usize,
    pub test_fraction: f64,
}

impl Default for SvmTrainConfig {
    fn default() -> Self {
        Self {
            orientations: 13,
            pixels_per_cell: 24,
            c: 10.0,
            epochs: 30,
            test_fraction: 1.0 / 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub debug_overlay: bool,
    /// Also write the per-step files (frames, detections, tracks, classes, sizes).
    pub stages: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            debug_overlay: false,
            stages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Advisory per-frame-pair budget; overruns are logged and counted.
    pub latency_budget_ms: f64,
    pub input: InputConfig,
    pub providers: ProvidersConfig,
    pub preprocess: PreprocessConfig,
    pub hough: HoughConfig,
    pub tracker: TrackerConfig,
    pub size: SizeConfig,
    pub svm: SvmTrainConfig,
    pub output: OutputConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            latency_budget_ms: 400.0,
            input: InputConfig::default(),
            providers: ProvidersConfig::default(),
            preprocess: PreprocessConfig::default(),
            hough: HoughConfig::default(),
            tracker: TrackerConfig::default(),
            size: SizeConfig::default(),
            svm: SvmTrainConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Loads a TOML file; relative paths inside it are resolved against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [
            &mut self.input.camera_a,
            &mut self.input.camera_b,
            &mut self.providers.detections,
            &mut self.providers.detections_b,
            &mut self.providers.svm_model,
            &mut self.providers.class_scores,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: &str| Err(Error::Config(m.into()));
        if !(self.latency_budget_ms > 0.0) {
            return cfg_err("latency_budget_ms must be positive");
        }
        if self.preprocess.downscale == 0 || self.preprocess.crop_side < 16 {
            return cfg_err("preprocess.downscale must be >= 1 and crop_side >= 16");
        }
        if !(self.preprocess.blur_sigma >= 0.0) {
            return cfg_err("preprocess.blur_sigma must be >= 0");
        }
        let sub = |r: Result<()>, block: &str| r.map_err(|e| Error::Config(format!("[{block}] {e}")));
        sub(self.hough.validate(), "hough")?;
        sub(self.tracker.validate(), "tracker")?;
        sub(self.size.raycast().validate(), "size")?;
        sub(self.size.pitch().validate(), "size")?;
        if !(self.svm.test_fraction > 0.0 && self.svm.test_fraction < 1.0) {
            return cfg_err("svm.test_fraction must be in (0, 1)");
        }
        match self.providers.wheels {
            WheelProvider::External if self.providers.detections.is_none() => {
                return cfg_err("providers.wheels = \"external\" needs providers.detections");
            }
            WheelProvider::External
                if self.input.camera_b.is_some() && self.providers.detections_b.is_none() =>
            {
                return cfg_err("external wheels with camera B need providers.detections_b");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn wheel_detector(&self) -> HoughWheelDetector {
        HoughWheelDetector {
            downscale: self.preprocess.downscale,
            blur_sigma: self.preprocess.blur_sigma,
            hough: self.hough.clone(),
        }
    }

    fn camera_a(&self) -> Result<&Path> {
        self.input
            .camera_a
            .as_deref()
            .ok_or_else(|| Error::Config("input.camera_a is required".into()))
    }
}

/// One frame pair: camera-A image (defines the frame index) and the
/// camera-B image at the same position in sorted order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub frame: usize,
    pub a: PathBuf,
    pub b: Option<PathBuf>,
    pub width: usize,
    pub height: usize,
    /// False when the camera-A header could not be read; the frame is then
    /// a gap with no detections.
    pub readable: bool,
}

/// Image files of a directory in lexicographic file-name order.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let ok = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if ok && p.is_file() {
            files.push(p);
        }
    }
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(files)
}

/// Pairs camera-A and camera-B frames by sorted position.
pub fn scan_frames(cfg: &PipelineConfig) -> Result<Vec<FrameEntry>> {
    let dir_a = cfg.camera_a()?;
    let a = list_images(dir_a)?;
    if a.is_empty() {
        return Err(Error::invalid(format!("no frames in {}", dir_a.display())));
    }
    let b = match &cfg.input.camera_b {
        Some(d) => list_images(d)?,
        None => Vec::new(),
    };
    if cfg.input.camera_b.is_some() && b.len() != a.len() {
        log::warn!("camera A has {} frames, camera B {}", a.len(), b.len());
    }
    Ok(a.into_iter()
        .enumerate()
        .map(|(i, pa)| {
            let (width, height, readable) = match image_dimensions(&pa) {
                Ok((w, h)) => (w, h, true),
                Err(e) => {
                    log::warn!("frame {i}: {e}; treated as a gap");
                    (0, 0, false)
                }
            };
            FrameEntry {
                frame: i,
                a: pa,
                b: b.get(i).cloned(),
                width,
                height,
                readable,
            }
        })
        .collect())
}

fn load_frame(path: &Path, frame: usize) -> Option<Image> {
    match Image::load(path) {
        Ok(img) => Some(img),
        Err(e) => {
            log::warn!("frame {frame}: {e}; treated as a gap");
            None
        }
    }
}

/// Detection sources resolved from the configuration.
pub struct DetectionProviders {
    hough: HoughWheelDetector,
    wheels: WheelProvider,
    dets_a: Option<ExternalDetections>,
    dets_b: Option<ExternalDetections>,
    camera_b: bool,
}

impl DetectionProviders {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        let p = &cfg.providers;
        let dets_a = p.detections.as_ref().map(ExternalDetections::load).transpose()?;
        if dets_a.is_none() {
            log::warn!("no car detections configured; no car can be inspected");
        }
        let dets_b = match p.wheels {
            WheelProvider::External => p.detections_b.as_ref().map(ExternalDetections::load).transpose()?,
            WheelProvider::Hough => None,
        };
        Ok(Self {
            hough: cfg.wheel_detector(),
            wheels: p.wheels,
            dets_a,
            dets_b,
            camera_b: cfg.input.camera_b.is_some(),
        })
    }

    fn wheel_source(&self, camera: Camera) -> Option<&dyn DetectionSource> {
        match (self.wheels, camera) {
            (WheelProvider::Hough, _) => Some(&self.hough),
            (WheelProvider::External, Camera::A) => self.dets_a.as_ref().map(|d| d as &dyn DetectionSource),
            (WheelProvider::External, Camera::B) => self.dets_b.as_ref().map(|d| d as &dyn DetectionSource),
        }
    }

    /// Detections of one frame pair. Unreadable frames yield no detections.
    pub fn detect_frame(&self, entry: &FrameEntry) -> Result<FrameDetections> {
        let mut out = FrameDetections {
            frame: entry.frame,
            width: entry.width,
            camera_b: self.camera_b.then(Vec::new),
            ..FrameDetections::default()
        };
        if !entry.readable {
            return Ok(out);
        }
        let hough = self.wheels == WheelProvider::Hough;
        let img_a = if hough {
            match load_frame(&entry.a, entry.frame) {
                Some(i) => Some(i),
                None => return Ok(out),
            }
        } else {
            None
        };
        if let Some(d) = &self.dets_a {
            out.cars = d.get(entry.frame, Label::Car).to_vec();
        }
        if let Some(src) = self.wheel_source(Camera::A) {
            out.wheels = src.detect(entry.frame, img_a.as_ref(), Label::Wheel)?;
        }
        if self.camera_b {
            let img_b = match (&entry.b, hough) {
                (Some(p), true) => load_frame(p, entry.frame),
                _ => None,
            };
            let run_b = entry.b.is_some() && (!hough || img_b.is_some());
            if let (true, Some(src)) = (run_b, self.wheel_source(Camera::B)) {
                out.camera_b = Some(src.detect(entry.frame, img_b.as_ref(), Label::Wheel)?);
            }
        }
        for d in out.cars.iter().chain(&out.wheels).chain(out.camera_b.iter().flatten()) {
            check_frame_bounds(d, entry.width, entry.height)?;
        }
        Ok(out)
    }
}

/// Per-frame stage timings in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub detect_ms: f64,
    pub track_ms: f64,
    pub classify_ms: f64,
    pub fit_ms: f64,
}

impl FrameTiming {
    pub fn total_ms(&self) -> f64 {
        self.detect_ms + self.track_ms + self.classify_ms + self.fit_ms
    }
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Runs detection over all frames in parallel; results keep frame order.
pub fn detect_stage(
    providers: &DetectionProviders,
    frames: &[FrameEntry],
) -> Result<(Vec<FrameDetections>, Vec<f64>)> {
    let results: Vec<Result<(FrameDetections, f64)>> = frames
        .par_iter()
        .map(|f| {
            let t = Instant::now();
            let d = providers.detect_frame(f)?;
            Ok((d, ms_since(t)))
        })
        .collect();
    let mut dets = Vec::with_capacity(frames.len());
    let mut ms = Vec::with_capacity(frames.len());
    for r in results {
        let (d, t) = r.map_err(|e| e.in_stage("detect"))?;
        dets.push(d);
        ms.push(t);
    }
    Ok((dets, ms))
}

/// Feeds the detections through the tracker in frame order.
pub fn track_stage(cfg: &TrackerConfig, frames: &[FrameDetections]) -> Result<(Vec<TrackEvent>, Vec<f64>)> {
    let mut tracker = Tracker::new(*cfg).map_err(|e| e.in_stage("track"))?;
    let mut events = Vec::new();
    let mut ms = Vec::with_capacity(frames.len());
    for f in frames {
        let t = Instant::now();
        let b = f.camera_b.as_ref().map(|d| (d.as_slice(), f.width));
        events.extend(
            tracker
                .update(f.frame, &f.cars, &f.wheels, b)
                .map_err(|e| e.in_stage("track"))?,
        );
        ms.push(ms_since(t));
    }
    events.extend(tracker.finish());
    Ok((events, ms))
}

/// Size measurement of one wheel observation. `error` explains a missing
/// diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeRecord {
    pub frame: usize,
    pub track: u64,
    pub camera: Camera,
    pub diameter_mm: Option<f64>,
    pub confidence: Option<f64>,
    pub rim: Option<Ellipse>,
    pub pitch: Option<Ellipse>,
    pub error: Option<String>,
}

/// What the observation stage computes for each wheel crop.
#[derive(Clone, Copy)]
pub struct ObserveOptions<'a> {
    pub classes: Option<&'a dyn ClassSource>,
    pub fit: Option<&'a SizeConfig>,
    pub crop_side: usize,
    pub overlay_dir: Option<&'a Path>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObserveOutput {
    pub classes: Vec<ClassRecord>,
    pub sizes: Vec<SizeRecord>,
    pub classify_ms: BTreeMap<usize, f64>,
    pub fit_ms: BTreeMap<usize, f64>,
}

struct WheelView {
    camera: Camera,
    track: u64,
    bbox: crate::geom::BBox,
}

/// Wheel detections attached to a car, grouped by frame in log order.
fn wheel_views(events: &[TrackEvent]) -> BTreeMap<usize, Vec<WheelView>> {
    let mut by_frame: BTreeMap<usize, Vec<WheelView>> = BTreeMap::new();
    for e in events {
        if let TrackEvent::Assign {
            frame,
            camera,
            label: Label::Wheel,
            bbox,
            track,
            car: Some(_),
            ..
        } = e
        {
            by_frame.entry(*frame).or_default().push(WheelView {
                camera: *camera,
                track: *track,
                bbox: *bbox,
            });
        }
    }
    by_frame
}

fn fit_one(
    crop: &Image,
    view: &WheelView,
    frame: usize,
    entry: &FrameEntry,
    cfg: &SizeConfig,
    overlay_dir: Option<&Path>,
) -> Result<SizeRecord> {
    let mut rec = SizeRecord {
        frame,
        track: view.track,
        camera: view.camera,
        diameter_mm: None,
        confidence: None,
        rim: None,
        pitch: None,
        error: None,
    };
    let b = &view.bbox;
    if b.x() < 0.0 || b.y() < 0.0 || b.right() > entry.width as f64 || b.bottom() > entry.height as f64 {
        rec.error = Some("wheel box extends past the frame".into());
        return Ok(rec);
    }
    match measure_crop(crop, None, cfg) {
        Ok(m) => {
            rec.diameter_mm = Some(m.estimate.diameter_mm);
            rec.confidence = Some(m.estimate.confidence);
            rec.rim = Some(m.estimate.rim);
            rec.pitch = Some(m.estimate.pitch);
            if let Some(dir) = overlay_dir {
                let name = format!("f{frame:05}_{:?}_t{}.png", view.camera, view.track);
                draw_overlay(crop, &m).save(dir.join(name))?;
            }
        }
        Err(e @ (Error::Internal(_) | Error::Io { .. } | Error::Image { .. })) => return Err(e),
        Err(e) => rec.error = Some(e.to_string()),
    }
    Ok(rec)
}

/// Crops every car wheel of every frame, then classifies and/or measures
/// it. Frames run in parallel; output order follows the track log.
pub fn observe_stage(
    frames: &[FrameEntry],
    events: &[TrackEvent],
    opts: ObserveOptions<'_>,
) -> Result<ObserveOutput> {
    if let Some(dir) = opts.overlay_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let entries: HashMap<usize, &FrameEntry> = frames.iter().map(|f| (f.frame, f)).collect();
    let views: Vec<(usize, Vec<WheelView>)> = wheel_views(events).into_iter().collect();
    type FrameOut = (usize, Vec<ClassRecord>, Vec<SizeRecord>, f64, f64);
    let per_frame: Vec<Result<FrameOut>> = views
        .par_iter()
        .map(|(frame, views)| {
            let frame = *frame;
            let mut classes = Vec::new();
            let mut sizes = Vec::new();
            let (mut c_ms, mut f_ms) = (0.0, 0.0);
            let Some(entry) = entries.get(&frame).copied().filter(|e| e.readable) else {
                return Ok((frame, classes, sizes, c_ms, f_ms));
            };
            let img_a = load_frame(&entry.a, frame);
            let img_b = if views.iter().any(|v| v.camera == Camera::B) {
                entry.b.as_deref().and_then(|p| load_frame(p, frame))
            } else {
                None
            };
            for v in views {
                let Some(img) = (match v.camera {
                    Camera::A => img_a.as_ref(),
                    Camera::B => img_b.as_ref(),
                }) else {
                    continue;
                };
                let t = Instant::now();
                let crop = to_grayscale(&crop_square(img, &v.bbox, opts.crop_side)?);
                let crop_ms = ms_since(t);
                if let Some(src) = opts.classes {
                    let t = Instant::now();
                    let key = ClassKey {
                        frame,
                        track: v.track,
                        camera: v.camera,
                        crop: None,
                    };
                    let scores = src.scores(&key, &crop).map_err(|e| e.in_stage("classify"))?;
                    if let Some(scores) = scores {
                        classes.push(ClassRecord {
                            frame,
                            track: v.track,
                            camera: v.camera,
                            scores,
                        });
                    }
                    c_ms += ms_since(t) + crop_ms;
                }
                if let Some(cfg) = opts.fit {
                    let t = Instant::now();
                    let rec = fit_one(&crop, v, frame, entry, cfg, opts.overlay_dir)
                        .map_err(|e| e.in_stage("fit"))?;
                    sizes.push(rec);
                    f_ms += ms_since(t) + crop_ms;
                }
            }
            Ok((frame, classes, sizes, c_ms, f_ms))
        })
        .collect();
    let mut out = ObserveOutput::default();
    for r in per_frame {
        let (frame, classes, sizes, c_ms, f_ms) = r?;
        out.classes.extend(classes);
        out.sizes.extend(sizes);
        out.classify_ms.insert(frame, c_ms);
        out.fit_ms.insert(frame, f_ms);
    }
    Ok(out)
}

/// Joins class and size records onto the track log and judges every
/// completed car.
pub fn verdict_stage(
    cfg: &TrackerConfig,
    events: &[TrackEvent],
    classes: &[ClassRecord],
    sizes: &[SizeRecord],
) -> Result<Vec<InspectionVerdict>> {
    let class_of: HashMap<(usize, u64, Camera), &ClassRecord> =
        classes.iter().map(|c| ((c.frame, c.track, c.camera), c)).collect();
    let size_of: HashMap<(usize, u64, Camera), &SizeRecord> =
        sizes.iter().map(|s| ((s.frame, s.track, s.camera), s)).collect();
    let mut observations = Vec::new();
    for (frame, views) in wheel_views(events) {
        for v in views {
            let key = (frame, v.track, v.camera);
            let (class, scores) = match class_of.get(&key) {
                Some(c) => (Some(argmax_class(&c.scores).map_err(|e| e.in_stage("verdict"))?), c.scores.clone()),
                None => (None, Vec::new()),
            };
            observations.push(Observation {
                frame,
                camera: v.camera,
                track: v.track,
                class,
                scores,
                diameter_mm: size_of.get(&key).and_then(|s| s.diameter_mm),
            });
        }
    }
    Ok(assemble_cars(events, &observations)
        .iter()
        .map(|car| inspect_car(car, cfg))
        .collect())
}

#[derive(Serialize)]
struct VerdictLine<'a> {
    schema: &'static str,
    #[serde(flatten)]
    verdict: &'a InspectionVerdict,
}

/// Verdict JSON lines, one car per line.
pub fn verdicts_jsonl(verdicts: &[InspectionVerdict]) -> Result<String> {
    let mut s = String::new();
    for v in verdicts {
        let line = VerdictLine {
            schema: VERDICT_SCHEMA,
            verdict: v,
        };
        s.push_str(&serde_json::to_string(&line).map_err(|e| Error::Internal(e.to_string()))?);
        s.push('\n');
    }
    Ok(s)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTotals {
    pub detect_ms: f64,
    pub track_ms: f64,
    pub classify_ms: f64,
    pub fit_ms: f64,
    pub verdict_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema: String,
    pub seed: u64,
    pub frames: usize,
    pub cars: usize,
    pub pass: usize,
    pub fail: usize,
    pub inconclusive: usize,
    pub latency_budget_ms: f64,
    /// Frames whose stage sum exceeded the budget.
    pub over_budget: Vec<usize>,
    pub totals: StageTotals,
    pub timings: Vec<FrameTiming>,
}

/// Everything a pipeline run produces.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub frames: Vec<FrameEntry>,
    pub detections: Vec<FrameDetections>,
    pub events: Vec<TrackEvent>,
    pub observed: ObserveOutput,
    pub verdicts: Vec<InspectionVerdict>,
    pub summary: RunSummary,
}

/// Builds the class-score source named by the configuration.
pub fn class_source(cfg: &PipelineConfig) -> Result<Option<Box<dyn ClassSource>>> {
    let p = &cfg.providers;
    Ok(match p.classes {
        ClassProvider::None => None,
        ClassProvider::Svm => {
            let path = p
                .svm_model
                .as_ref()
                .ok_or_else(|| Error::Config("providers.svm_model is not set".into()))?;
            Some(Box::new(SvmClassifier {
                model: SvmModel::load(path)?,
            }))
        }
        ClassProvider::External => {
            let path = p
                .class_scores
                .as_ref()
                .ok_or_else(|| Error::Config("providers.class_scores is not set".into()))?;
            Some(Box::new(ExternalClasses::load(path)?))
        }
    })
}

fn summarize(cfg: &PipelineConfig, frames: usize, verdicts: &[InspectionVerdict], timings: Vec<FrameTiming>, verdict_ms: f64) -> RunSummary {
    use crate::tracking::Verdict;
    let count = |k: Verdict| verdicts.iter().filter(|v| v.verdict == k).count();
    let mut totals = StageTotals {
        verdict_ms,
        ..StageTotals::default()
    };
    let mut over_budget = Vec::new();
    for t in &timings {
        totals.detect_ms += t.detect_ms;
        totals.track_ms += t.track_ms;
        totals.classify_ms += t.classify_ms;
        totals.fit_ms += t.fit_ms;
        if t.total_ms() > cfg.latency_budget_ms {
            log::warn!(
                "frame {}: {:.1} ms exceeds the {:.0} ms budget",
                t.frame,
                t.total_ms(),
                cfg.latency_budget_ms
            );
            over_budget.push(t.frame);
        }
    }
    RunSummary {
        schema: SUMMARY_SCHEMA.into(),
        seed: cfg.seed,
        frames,
        cars: verdicts.len(),
        pass: count(Verdict::Pass),
        fail: count(Verdict::Fail),
        inconclusive: count(Verdict::Inconclusive),
        latency_budget_ms: cfg.latency_budget_ms,
        over_budget,
        totals,
        timings,
    }
}

/// Full run: detect, track, classify, fit, judge.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let frames = scan_frames(cfg)?;
    let providers = DetectionProviders::from_config(cfg)?;
    let classes = class_source(cfg)?;
    let (detections, detect_ms) = detect_stage(&providers, &frames)?;
    let (events, track_ms) = track_stage(&cfg.tracker, &detections)?;
    let overlay = cfg.output.dir.join(OVERLAY_DIR);
    let observed = observe_stage(
        &frames,
        &events,
        ObserveOptions {
            classes: classes.as_deref(),
            fit: Some(&cfg.size),
            crop_side: cfg.preprocess.crop_side,
            overlay_dir: cfg.output.debug_overlay.then_some(overlay.as_path()),
        },
    )?;
    let t = Instant::now();
    let verdicts = verdict_stage(&cfg.tracker, &events, &observed.classes, &observed.sizes)?;
    let verdict_ms = ms_since(t);
    let timings = frames
        .iter()
        .enumerate()
        .map(|(i, f)| FrameTiming {
            frame: f.frame,
            detect_ms: detect_ms[i],
            track_ms: track_ms[i],
            classify_ms: observed.classify_ms.get(&f.frame).copied().unwrap_or(0.0),
            fit_ms: observed.fit_ms.get(&f.frame).copied().unwrap_or(0.0),
        })
        .collect();
    let summary = summarize(cfg, frames.len(), &verdicts, timings, verdict_ms);
    Ok(PipelineOutput {
        frames,
        detections,
        events,
        observed,
        verdicts,
        summary,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_frame_detections(dir: &Path, dets: &[FrameDetections]) -> Result<()> {
    let a: Vec<Detection> = dets
        .iter()
        .flat_map(|f| f.cars.iter().chain(&f.wheels).copied())
        .collect();
    write_detections(&dir.join(DETECTIONS_FILE), &a)?;
    if dets.iter().any(|f| f.camera_b.is_some()) {
        let b: Vec<Detection> = dets.iter().flat_map(|f| f.camera_b.iter().flatten().copied()).collect();
        write_detections(&dir.join(DETECTIONS_B_FILE), &b)?;
    }
    Ok(())
}

fn write_sizes(path: &Path, sizes: &[SizeRecord]) -> Result<()> {
    write_jsonl(path, sizes)
}

/// Writes verdicts, the run summary and (when enabled) every step file.
pub fn write_outputs(cfg: &PipelineConfig, out: &PipelineOutput) -> Result<()> {
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    write_text(&dir.join(VERDICTS_FILE), &verdicts_jsonl(&out.verdicts)?)?;
    let summary = serde_json::to_string_pretty(&out.summary).map_err(|e| Error::Internal(e.to_string()))?;
    write_text(&dir.join(SUMMARY_FILE), &(summary + "\n"))?;
    if cfg.output.stages {
        write_jsonl(&dir.join(FRAMES_FILE), &out.frames)?;
        write_frame_detections(dir, &out.detections)?;
        write_jsonl(&dir.join(TRACKS_FILE), &out.events)?;
        write_classes(&dir.join(CLASSES_FILE), &out.observed.classes)?;
        write_sizes(&dir.join(SIZES_FILE), &out.observed.sizes)?;
    }
    Ok(())
}

fn read_all<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, v)| v).collect())
}

/// Frame list written by [`cmd_detect`].
pub fn read_frames(dir: &Path) -> Result<Vec<FrameEntry>> {
    read_all(&dir.join(FRAMES_FILE))
}

pub fn read_tracks(dir: &Path) -> Result<Vec<TrackEvent>> {
    read_all(&dir.join(TRACKS_FILE))
}

pub fn read_sizes(dir: &Path) -> Result<Vec<SizeRecord>> {
    read_all(&dir.join(SIZES_FILE))
}

pub fn read_classes(dir: &Path) -> Result<Vec<ClassRecord>> {
    #[derive(Deserialize)]
    struct Line {
        schema: Option<String>,
        frame: usize,
        track: u64,
        camera: Option<Camera>,
        scores: Vec<f64>,
    }
    let path = dir.join(CLASSES_FILE);
    read_jsonl::<Line>(&path)?
        .into_iter()
        .map(|(line, l)| {
            if l.schema.as_deref().is_some_and(|s| s != CLS_SCHEMA) {
                return Err(Error::Parse {
                    path: path.clone(),
                    line,
                    msg: "unsupported schema".into(),
                });
            }
            Ok(ClassRecord {
                frame: l.frame,
                track: l.track,
                camera: l.camera.unwrap_or(Camera::A),
                scores: l.scores,
            })
        })
        .collect()
}

/// Rebuilds per-frame detections from the files written by [`cmd_detect`].
pub fn read_frame_detections(dir: &Path, frames: &[FrameEntry]) -> Result<Vec<FrameDetections>> {
    let a = ExternalDetections::load(dir.join(DETECTIONS_FILE))?;
    let b_path = dir.join(DETECTIONS_B_FILE);
    let b = if b_path.exists() {
        Some(ExternalDetections::load(&b_path)?)
    } else {
        None
    };
    Ok(frames
        .iter()
        .map(|f| FrameDetections {
            frame: f.frame,
            width: f.width,
            cars: a.get(f.frame, Label::Car).to_vec(),
            wheels: a.get(f.frame, Label::Wheel).to_vec(),
            camera_b: b.as_ref().map(|b| b.get(f.frame, Label::Wheel).to_vec()),
        })
        .collect())
}

/// Detection step: writes the frame list and detection files.
pub fn cmd_detect(cfg: &PipelineConfig) -> Result<Vec<FrameDetections>> {
    cfg.validate()?;
    let frames = scan_frames(cfg)?;
    let providers = DetectionProviders::from_config(cfg)?;
    let (dets, _) = detect_stage(&providers, &frames)?;
    create_dir(&cfg.output.dir)?;
    write_jsonl(&cfg.output.dir.join(FRAMES_FILE), &frames)?;
    write_frame_detections(&cfg.output.dir, &dets)?;
    Ok(dets)
}

/// Tracking step: reads the detection files from `from`, writes the track log.
pub fn cmd_track(cfg: &PipelineConfig, from: &Path) -> Result<Vec<TrackEvent>> {
    cfg.validate()?;
    let frames = read_frames(from)?;
    let dets = read_frame_detections(from, &frames)?;
    let (events, _) = track_stage(&cfg.tracker, &dets)?;
    create_dir(&cfg.output.dir)?;
    write_jsonl(&cfg.output.dir.join(TRACKS_FILE), &events)?;
    Ok(events)
}

/// Classification step over the tracked car wheels.
pub fn cmd_classify(cfg: &PipelineConfig, from: &Path) -> Result<Vec<ClassRecord>> {
    cfg.validate()?;
    let frames = read_frames(from)?;
    let events = read_tracks(from)?;
    let source = class_source(cfg)?;
    let out = observe_stage(
        &frames,
        &events,
        ObserveOptions {
            classes: source.as_deref(),
            fit: None,
            crop_side: cfg.preprocess.crop_side,
            overlay_dir: None,
        },
    )?;
    create_dir(&cfg.output.dir)?;
    write_classes(&cfg.output.dir.join(CLASSES_FILE), &out.classes)?;
    Ok(out.classes)
}

/// Size step over the tracked car wheels; overlays when enabled.
pub fn cmd_fit(cfg: &PipelineConfig, from: &Path) -> Result<Vec<SizeRecord>> {
    cfg.validate()?;
    let frames = read_frames(from)?;
    let events = read_tracks(from)?;
    let overlay = cfg.output.dir.join(OVERLAY_DIR);
    let out = observe_stage(
        &frames,
        &events,
        ObserveOptions {
            classes: None,
            fit: Some(&cfg.size),
            crop_side: cfg.preprocess.crop_side,
            overlay_dir: cfg.output.debug_overlay.then_some(overlay.as_path()),
        },
    )?;
    create_dir(&cfg.output.dir)?;
    write_sizes(&cfg.output.dir.join(SIZES_FILE), &out.sizes)?;
    Ok(out.sizes)
}

/// Verdict step from the files of the previous steps.
pub fn cmd_verdicts(cfg: &PipelineConfig, from: &Path) -> Result<Vec<InspectionVerdict>> {
    cfg.validate()?;
    let events = read_tracks(from)?;
    let classes_path = from.join(CLASSES_FILE);
    let classes = if classes_path.exists() {
        read_classes(from)?
    } else {
        Vec::new()
    };
    let sizes = read_sizes(from)?;
    let verdicts = verdict_stage(&cfg.tracker, &events, &classes, &sizes)?;
    create_dir(&cfg.output.dir)?;
    write_text(&cfg.output.dir.join(VERDICTS_FILE), &verdicts_jsonl(&verdicts)?)?;
    Ok(verdicts)
}
