//! IoU tracking of cars and wheels, per-track class voting, camera-B
//! linking and the four-wheel verdict.
//!
//! The tracker emits a flat event log (assignments and car completions).
//! Per-wheel observations (class scores, diameters) are joined to that log
//! afterwards by [`assemble_cars`], so the same verdicts come out whether the
//! stages run in one process or through files.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{iou, BBox, Detection, Label, RimClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassVote {
    Median,
    Mode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub iou_min: f64,
    pub max_missed: usize,
    pub min_hits: usize,
    pub class_vote: ClassVote,
    pub diameter_tolerance: f64,
    /// Camera-B claim window as a fraction of frame width.
    pub camera_b_window: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_min: 0.3,
            max_missed: 3,
            min_hits: 2,
            class_vote: ClassVote::Median,
            diameter_tolerance: 0.05,
            camera_b_window: 0.15,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_min > 0.0 && self.iou_min <= 1.0) {
            return Err(Error::invalid(format!("iou_min {} outside (0, 1]", self.iou_min)));
        }
        if self.min_hits == 0 {
            return Err(Error::invalid("min_hits must be at least 1"));
        }
        if !(self.diameter_tolerance >= 0.0) || !(self.camera_b_window >= 0.0) {
            return Err(Error::invalid(
                "diameter_tolerance and camera_b_window must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackState {
    Tentative,
    Confirmed,
    Dead,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub boxes: Vec<(usize, BBox)>,
    pub missed: usize,
    pub state: TrackState,
}

impl Track {
    pub fn last_box(&self) -> BBox {
        self.boxes.last().expect("tracks start with one box").1
    }
}

/// Greedy IoU tracker for one object category.
#[derive(Debug, Clone)]
pub struct IouTracker {
    cfg: TrackerConfig,
    next_id: u64,
    live: Vec<Track>,
    last_frame: Option<usize>,
}

/// Result of one [`IouTracker::update`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrackUpdate {
    /// Track id per input detection, in input order.
    pub ids: Vec<u64>,
    /// Tracks that died this frame.
    pub died: Vec<Track>,
}

impl IouTracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        Self::with_first_id(cfg, 1)
    }

    pub fn with_first_id(cfg: TrackerConfig, first_id: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            next_id: first_id,
            live: Vec::new(),
            last_frame: None,
        })
    }

    pub fn live(&self) -> &[Track] {
        &self.live
    }

    pub fn update(&mut self, frame: usize, boxes: &[BBox]) -> Result<TrackUpdate> {
        if let Some(last) = self.last_frame {
            if frame <= last {
                return Err(Error::invalid(format!(
                    "frame {frame} does not follow frame {last}"
                )));
            }
        }
        self.last_frame = Some(frame);

        let mut pairs = Vec::new();
        for (ti, t) in self.live.iter().enumerate() {
            let last = t.last_box();
            for (di, b) in boxes.iter().enumerate() {
                let v = iou(&last, b);
                if v >= self.cfg.iou_min {
                    pairs.push((v, t.id, ti, di));
                }
            }
        }
        pairs.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then(a.1.cmp(&b.1))
                .then(a.3.cmp(&b.3))
        });
        let mut track_used = vec![false; self.live.len()];
        let mut ids: Vec<Option<u64>> = vec![None; boxes.len()];
        for (_, id, ti, di) in pairs {
            if track_used[ti] || ids[di].is_some() {
                continue;
            }
            track_used[ti] = true;
            ids[di] = Some(id);
            let t = &mut self.live[ti];
            t.boxes.push((frame, boxes[di]));
            t.missed = 0;
            if t.boxes.len() >= self.cfg.min_hits {
                t.state = TrackState::Confirmed;
            }
        }

        let mut died = Vec::new();
        let mut kept = Vec::with_capacity(self.live.len());
        for (t, used) in std::mem::take(&mut self.live).into_iter().zip(track_used) {
            let mut t = t;
            if !used {
                t.missed += 1;
                if t.missed > self.cfg.max_missed {
                    t.state = TrackState::Dead;
                    died.push(t);
                    continue;
                }
            }
            kept.push(t);
        }
        self.live = kept;

        for (di, slot) in ids.iter_mut().enumerate() {
            if slot.is_none() {
                let id = self.next_id;
                self.next_id += 1;
                let state = if self.cfg.min_hits <= 1 {
                    TrackState::Confirmed
                } else {
                    TrackState::Tentative
                };
                self.live.push(Track {
                    id,
                    boxes: vec![(frame, boxes[di])],
                    missed: 0,
                    state,
                });
                *slot = Some(id);
            }
        }
        Ok(TrackUpdate {
            ids: ids.into_iter().map(|i| i.expect("every detection assigned")).collect(),
            died,
        })
    }

    /// Ends the stream: every live track dies, in id order.
    pub fn finish(&mut self) -> Vec<Track> {
        let mut out: Vec<Track> = std::mem::take(&mut self.live);
        out.sort_by_key(|t| t.id);
        for t in &mut out {
            t.state = TrackState::Dead;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Camera {
    A,
    B,
}

/// Pairs camera-A wheel boxes with camera-B detections by nearest box-center
/// x within `window` pixels. Each side is used at most once; closer pairs win.
/// Returns, per A entry, the index of the claimed B detection.
pub fn link_camera_b(a: &[(u64, BBox)], b: &[Detection], window: f64) -> Vec<Option<usize>> {
    let mut pairs = Vec::new();
    for (ai, (id, abox)) in a.iter().enumerate() {
        let ax = abox.center().0;
        for (bi, d) in b.iter().enumerate() {
            let dx = (d.bbox.center().0 - ax).abs();
            if dx <= window {
                pairs.push((dx, *id, ai, bi));
            }
        }
    }
    pairs.sort_by(|p, q| {
        p.0.total_cmp(&q.0)
            .then(p.1.cmp(&q.1))
            .then(p.3.cmp(&q.3))
    });
    let mut out = vec![None; a.len()];
    let mut b_used = vec![false; b.len()];
    for (_, _, ai, bi) in pairs {
        if out[ai].is_none() && !b_used[bi] {
            out[ai] = Some(bi);
            b_used[bi] = true;
        }
    }
    out
}

/// One line of the tracking log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrackEvent {
    /// A detection attached to a track. Camera-B wheels carry the id of the
    /// camera-A wheel track that claimed them.
    Assign {
        frame: usize,
        camera: Camera,
        label: Label,
        bbox: BBox,
        score: f64,
        track: u64,
        car: Option<u64>,
    },
    /// A confirmed car track ended; its wheels can be inspected.
    CarComplete { frame: usize, car: u64 },
}

/// Car and wheel trackers plus wheel-to-car bookkeeping.
#[derive(Debug, Clone)]
pub struct Tracker {
    cfg: TrackerConfig,
    cars: IouTracker,
    wheels: IouTracker,
    wheel_car: BTreeMap<u64, u64>,
    last_frame: Option<usize>,
}

impl Tracker {
    pub fn new(cfg: TrackerConfig) -> Result<Self> {
        Ok(Self {
            cfg,
            cars: IouTracker::new(cfg)?,
            wheels: IouTracker::new(cfg)?,
            wheel_car: BTreeMap::new(),
            last_frame: None,
        })
    }

    /// Processes one frame. `camera_b` holds the far-side wheel detections and
    /// the frame width used for the claim window.
    pub fn update(
        &mut self,
        frame: usize,
        cars: &[Detection],
        wheels: &[Detection],
        camera_b: Option<(&[Detection], usize)>,
    ) -> Result<Vec<TrackEvent>> {
        let car_boxes: Vec<BBox> = cars.iter().map(|d| d.bbox).collect();
        let wheel_boxes: Vec<BBox> = wheels.iter().map(|d| d.bbox).collect();
        let cu = self.cars.update(frame, &car_boxes)?;
        let wu = self.wheels.update(frame, &wheel_boxes)?;
        self.last_frame = Some(frame);

        let mut events = Vec::new();
        for (d, &id) in cars.iter().zip(&cu.ids) {
            events.push(TrackEvent::Assign {
                frame,
                camera: Camera::A,
                label: Label::Car,
                bbox: d.bbox,
                score: d.score,
                track: id,
                car: Some(id),
            });
        }

        for (d, &wid) in wheels.iter().zip(&wu.ids) {
            if !self.wheel_car.contains_key(&wid) {
                if let Some(car) = containing_car(&d.bbox, &cu.ids, &car_boxes) {
                    self.wheel_car.insert(wid, car);
                }
            }
            events.push(TrackEvent::Assign {
                frame,
                camera: Camera::A,
                label: Label::Wheel,
                bbox: d.bbox,
                score: d.score,
                track: wid,
                car: self.wheel_car.get(&wid).copied(),
            });
        }

        if let Some((b_dets, width)) = camera_b {
            let a: Vec<(u64, BBox)> = wu.ids.iter().copied().zip(wheel_boxes.iter().copied()).collect();
            let window = self.cfg.camera_b_window * width as f64;
            let claims = link_camera_b(&a, b_dets, window);
            for ((wid, _), claim) in a.iter().zip(claims) {
                if let Some(bi) = claim {
                    let d = &b_dets[bi];
                    events.push(TrackEvent::Assign {
                        frame,
                        camera: Camera::B,
                        label: Label::Wheel,
                        bbox: d.bbox,
                        score: d.score,
                        track: *wid,
                        car: self.wheel_car.get(wid).copied(),
                    });
                }
            }
        }

        let mut died: Vec<&Track> = cu.died.iter().collect();
        died.sort_by_key(|t| t.id);
        for t in died {
            if t.boxes.len() >= self.cfg.min_hits {
                events.push(TrackEvent::CarComplete { frame, car: t.id });
            }
        }
        for t in &wu.died {
            if !self.wheel_car.contains_key(&t.id) {
                log::debug!("wheel track {} ended without a car", t.id);
            }
        }
        Ok(events)
    }

    /// Flushes the stream; every confirmed live car completes.
    pub fn finish(&mut self) -> Vec<TrackEvent> {
        let frame = self.last_frame.unwrap_or(0);
        self.wheels.finish();
        self.cars
            .finish()
            .into_iter()
            .filter(|t| t.boxes.len() >= self.cfg.min_hits)
            .map(|t| TrackEvent::CarComplete { frame, car: t.id })
            .collect()
    }
}

/// Car whose box contains the wheel center; ties to the nearest car center,
/// then the smaller id.
fn containing_car(wheel: &BBox, ids: &[u64], boxes: &[BBox]) -> Option<u64> {
    let (wx, wy) = wheel.center();
    ids.iter()
        .zip(boxes)
        .filter(|(_, b)| b.contains_point(wx, wy))
        .map(|(&id, b)| {
            let (cx, cy) = b.center();
            ((cx - wx).hypot(cy - wy), id)
        })
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, id)| id)
}

/// Runs a whole detection stream through a [`Tracker`].
pub fn track_stream(
    cfg: TrackerConfig,
    frames: &[FrameDetections],
) -> Result<Vec<TrackEvent>> {
    let mut tracker = Tracker::new(cfg)?;
    let mut events = Vec::new();
    for f in frames {
        let b = f.camera_b.as_ref().map(|d| (d.as_slice(), f.width));
        events.extend(tracker.update(f.frame, &f.cars, &f.wheels, b)?);
    }
    events.extend(tracker.finish());
    Ok(events)
}

/// Detections of one frame pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub frame: usize,
    pub width: usize,
    pub cars: Vec<Detection>,
    pub wheels: Vec<Detection>,
    pub camera_b: Option<Vec<Detection>>,
}

/// Classification and size evidence for one wheel in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub frame: usize,
    pub camera: Camera,
    pub track: u64,
    pub class: Option<RimClass>,
    /// Per-class scores indexed by class id; empty when unavailable.
    #[serde(default)]
    pub scores: Vec<f64>,
    pub diameter_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Position {
    FL,
    FR,
    RL,
    RR,
}

impl Position {
    pub const ALL: [Position; 4] = [Position::FL, Position::FR, Position::RL, Position::RR];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelEntry {
    pub frame: usize,
    pub bbox: BBox,
    pub class: Option<RimClass>,
    pub scores: Vec<f64>,
    pub diameter_mm: Option<f64>,
}

/// One physical wheel of a car: a camera-A track or the camera-B detections
/// it claimed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarWheel {
    pub position: Position,
    pub track_id: u64,
    pub camera: Camera,
    pub entries: Vec<WheelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarRecord {
    pub car_track_id: u64,
    pub wheels: Vec<CarWheel>,
    pub complete: bool,
}

/// Joins the event log with observations into one record per completed car,
/// in completion order.
pub fn assemble_cars(events: &[TrackEvent], observations: &[Observation]) -> Vec<CarRecord> {
    let obs: BTreeMap<(usize, Camera, u64), &Observation> = observations
        .iter()
        .map(|o| ((o.frame, o.camera, o.track), o))
        .collect();

    let mut car_boxes: BTreeMap<u64, Vec<(usize, BBox)>> = BTreeMap::new();
    let mut wheel_entries: BTreeMap<(Camera, u64), Vec<WheelEntry>> = BTreeMap::new();
    let mut wheel_car: BTreeMap<u64, u64> = BTreeMap::new();
    let mut completed = Vec::new();
    for e in events {
        match e {
            TrackEvent::Assign {
                frame,
                camera,
                label,
                bbox,
                track,
                car,
                ..
            } => match label {
                Label::Car => car_boxes.entry(*track).or_default().push((*frame, *bbox)),
                Label::Wheel => {
                    if let Some(c) = car {
                        wheel_car.entry(*track).or_insert(*c);
                    }
                    let o = obs.get(&(*frame, *camera, *track));
                    let entry = WheelEntry {
                        frame: *frame,
                        bbox: *bbox,
                        class: o.and_then(|o| o.class),
                        scores: o.map(|o| o.scores.clone()).unwrap_or_default(),
                        diameter_mm: o.and_then(|o| o.diameter_mm),
                    };
                    wheel_entries
                        .entry((*camera, *track))
                        .or_default()
                        .push(entry);
                }
                _ => {}
            },
            TrackEvent::CarComplete { car, .. } => completed.push(*car),
        }
    }
    // wheel entries logged before their car was known still belong to it
    let mut by_car: BTreeMap<u64, Vec<(Camera, u64, Vec<WheelEntry>)>> = BTreeMap::new();
    for ((camera, track), entries) in wheel_entries {
        if let Some(&car) = wheel_car.get(&track) {
            by_car.entry(car).or_default().push((camera, track, entries));
        }
    }

    completed
        .into_iter()
        .map(|car| {
            let boxes = car_boxes.get(&car).cloned().unwrap_or_default();
            let wheels = by_car.remove(&car).unwrap_or_default();
            build_car_record(car, &boxes, wheels)
        })
        .collect()
}

fn build_car_record(
    car: u64,
    car_boxes: &[(usize, BBox)],
    wheels: Vec<(Camera, u64, Vec<WheelEntry>)>,
) -> CarRecord {
    let direction = match (car_boxes.first(), car_boxes.last()) {
        (Some(f), Some(l)) if l.1.center().0 < f.1.center().0 => -1.0,
        _ => 1.0,
    };
    let car_cx = |frame: usize| -> Option<f64> {
        // car box at the frame, or the nearest earlier one, or the first
        let idx = car_boxes.partition_point(|(f, _)| *f <= frame);
        car_boxes
            .get(idx.saturating_sub(1))
            .or(car_boxes.first())
            .map(|(_, b)| b.center().0)
    };

    let mut a_side: Vec<(u64, Vec<WheelEntry>)> = Vec::new();
    let mut b_side: BTreeMap<u64, Vec<WheelEntry>> = BTreeMap::new();
    for (camera, track, entries) in wheels {
        match camera {
            Camera::A => a_side.push((track, entries)),
            Camera::B => {
                b_side.insert(track, entries);
            }
        }
    }
    // the two longest camera-A tracks are this car's near-side wheels
    a_side.sort_by(|x, y| y.1.len().cmp(&x.1.len()).then(x.0.cmp(&y.0)));
    a_side.truncate(2);

    let forward = |entries: &[WheelEntry]| -> f64 {
        let offs: Vec<f64> = entries
            .iter()
            .filter_map(|e| car_cx(e.frame).map(|c| e.bbox.center().0 - c))
            .collect();
        direction * offs.iter().sum::<f64>() / offs.len().max(1) as f64
    };
    let mut placed: Vec<(f64, u64, Vec<WheelEntry>)> = a_side
        .into_iter()
        .map(|(t, e)| (forward(&e), t, e))
        .collect();
    placed.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));

    let mut out = Vec::new();
    let n = placed.len();
    for (i, (fwd, track, entries)) in placed.into_iter().enumerate() {
        let front = if n == 2 { i == 0 } else { fwd >= 0.0 };
        let (near, far) = if front {
            (Position::FL, Position::FR)
        } else {
            (Position::RL, Position::RR)
        };
        if let Some(b) = b_side.remove(&track) {
            out.push(CarWheel {
                position: far,
                track_id: track,
                camera: Camera::B,
                entries: b,
            });
        }
        out.push(CarWheel {
            position: near,
            track_id: track,
            camera: Camera::A,
            entries,
        });
    }
    out.sort_by_key(|w| w.position);
    CarRecord {
        car_track_id: car,
        complete: out.len() == 4,
        wheels: out,
    }
}

/// Track-level class from per-frame classes. Class 0 and unclassified
/// entries are dropped first; `None` when nothing remains.
pub fn aggregate_class(entries: &[WheelEntry], vote: ClassVote) -> Option<RimClass> {
    let valid: Vec<&WheelEntry> = entries
        .iter()
        .filter(|e| e.class.is_some_and(|c| !c.is_occluded()))
        .collect();
    if valid.is_empty() {
        return None;
    }
    match vote {
        ClassVote::Median => {
            let mut ids: Vec<RimClass> = valid.iter().filter_map(|e| e.class).collect();
            ids.sort();
            Some(ids[(ids.len() - 1) / 2])
        }
        ClassVote::Mode => {
            let mut tally: BTreeMap<RimClass, (usize, f64)> = BTreeMap::new();
            for e in &valid {
                let c = e.class.expect("filtered");
                let margin = e.scores.get(c.id() as usize).copied().unwrap_or(0.0);
                let t = tally.entry(c).or_insert((0, 0.0));
                t.0 += 1;
                t.1 += margin;
            }
            // BTreeMap iterates ascending, so strict comparisons keep the smaller id
            let mut best: Option<(RimClass, usize, f64)> = None;
            for (c, (n, m)) in tally {
                let better = match best {
                    None => true,
                    Some((_, bn, bm)) => n > bn || (n == bn && m > bm),
                };
                if better {
                    best = Some((c, n, m));
                }
            }
            best.map(|b| b.0)
        }
    }
}

/// Median of the per-frame diameter estimates (mean of the middle pair for
/// even counts).
pub fn aggregate_diameter(entries: &[WheelEntry]) -> Option<f64> {
    let mut d: Vec<f64> = entries.iter().filter_map(|e| e.diameter_mm).collect();
    median(&mut d)
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reason {
    pub code: String,
    pub positions: Vec<Position>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelVerdict {
    pub position: Position,
    pub class: Option<RimClass>,
    pub diameter_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InspectionVerdict {
    pub car_track_id: u64,
    pub wheels: Vec<WheelVerdict>,
    pub verdict: Verdict,
    pub reasons: Vec<Reason>,
}

/// Aggregates each wheel of a car and applies the four-wheel rule.
pub fn inspect_car(car: &CarRecord, cfg: &TrackerConfig) -> InspectionVerdict {
    let wheels: Vec<WheelVerdict> = car
        .wheels
        .iter()
        .map(|w| WheelVerdict {
            position: w.position,
            class: aggregate_class(&w.entries, cfg.class_vote),
            diameter_mm: aggregate_diameter(&w.entries),
        })
        .collect();
    judge_wheels(car.car_track_id, wheels, cfg.diameter_tolerance)
}

/// The four-wheel rule on already aggregated wheels.
pub fn judge_wheels(car_track_id: u64, mut wheels: Vec<WheelVerdict>, tolerance: f64) -> InspectionVerdict {
    wheels.sort_by_key(|w| w.position);
    let mut reasons = Vec::new();
    let present: Vec<Position> = wheels.iter().map(|w| w.position).collect();
    let missing: Vec<Position> = Position::ALL
        .into_iter()
        .filter(|p| !present.contains(p))
        .collect();
    let done = |verdict, reasons| InspectionVerdict {
        car_track_id,
        wheels: wheels.clone(),
        verdict,
        reasons,
    };
    if !missing.is_empty() {
        reasons.push(Reason {
            code: "wheels_missing".into(),
            positions: missing,
        });
        return done(Verdict::Inconclusive, reasons);
    }
    let unclassified: Vec<Position> = wheels
        .iter()
        .filter(|w| w.class.is_none())
        .map(|w| w.position)
        .collect();
    if !unclassified.is_empty() {
        reasons.push(Reason {
            code: "unclassified".into(),
            positions: unclassified,
        });
        return done(Verdict::Inconclusive, reasons);
    }

    let mut counts: BTreeMap<RimClass, usize> = BTreeMap::new();
    for w in &wheels {
        *counts.entry(w.class.expect("checked")).or_default() += 1;
    }
    if counts.len() > 1 {
        let mut plurality = None;
        for (c, n) in &counts {
            if plurality.is_none_or(|(_, bn)| *n > bn) {
                plurality = Some((*c, *n));
            }
        }
        let plurality = plurality.expect("non-empty").0;
        reasons.push(Reason {
            code: "class_mismatch".into(),
            positions: wheels
                .iter()
                .filter(|w| w.class != Some(plurality))
                .map(|w| w.position)
                .collect(),
        });
    }

    let diameters: Option<Vec<f64>> = wheels.iter().map(|w| w.diameter_mm).collect();
    match diameters {
        Some(mut d) => {
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let med = median(&mut d).expect("four wheels");
            if hi - lo > tolerance * med {
                reasons.push(Reason {
                    code: "size_mismatch".into(),
                    positions: wheels
                        .iter()
                        .filter(|w| {
                            (w.diameter_mm.expect("checked") - med).abs() > tolerance * med / 2.0
                        })
                        .map(|w| w.position)
                        .collect(),
                });
            }
        }
        None if reasons.is_empty() => {
            reasons.push(Reason {
                code: "size_missing".into(),
                positions: wheels
                    .iter()
                    .filter(|w| w.diameter_mm.is_none())
                    .map(|w| w.position)
                    .collect(),
            });
            return done(Verdict::Inconclusive, reasons);
        }
        None => {}
    }
    if reasons.is_empty() {
        done(Verdict::Pass, reasons)
    } else {
        done(Verdict::Fail, reasons)
    }
}
