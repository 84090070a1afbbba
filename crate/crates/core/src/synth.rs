//! Deterministic synthetic wheel scenes with analytic ground truth.
//!
//! A wheel is drawn in its own plane (millimeters) and projected
//! orthographically: rotation by the tilt about the vertical axis compresses
//! x by `cos(tilt)`. Because the projection is affine, every circle of the
//! wheel maps to an ellipse that is known exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Ellipse, RimClass};
use crate::image::Image;

/// Built-in rim designs used as synthetic classes 1-5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpokePattern {
    Spokes3,
    Spokes5,
    Spokes7,
    Spokes10,
    Solid,
}

impl SpokePattern {
    pub const ALL: [SpokePattern; 5] = [
        SpokePattern::Spokes3,
        SpokePattern::Spokes5,
        SpokePattern::Spokes7,
        SpokePattern::Spokes10,
        SpokePattern::Solid,
    ];

    pub fn spokes(&self) -> Option<usize> {
        match self {
            SpokePattern::Spokes3 => Some(3),
            SpokePattern::Spokes5 => Some(5),
            SpokePattern::Spokes7 => Some(7),
            SpokePattern::Spokes10 => Some(10),
            SpokePattern::Solid => None,
        }
    }

    pub fn class(&self) -> RimClass {
        let id = match self {
            SpokePattern::Spokes3 => 1,
            SpokePattern::Spokes5 => 2,
            SpokePattern::Spokes7 => 3,
            SpokePattern::Spokes10 => 4,
            SpokePattern::Solid => 5,
        };
        RimClass::new(id).expect("ids 1-5 are valid")
    }

    /// Inner radius of the rim flange as a fraction of the rim radius.
    pub fn flange_inner(&self) -> f64 {
        match self {
            SpokePattern::Spokes3 => 0.88,
            SpokePattern::Spokes5 => 0.80,
            SpokePattern::Spokes7 => 0.92,
            SpokePattern::Spokes10 => 0.72,
            SpokePattern::Solid => 0.85,
        }
    }

    pub fn from_class(c: RimClass) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.class() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WheelIntensities {
    pub tire: u8,
    pub rim: u8,
    pub hub: u8,
    pub window: u8,
    pub bolt: u8,
}

impl Default for WheelIntensities {
    fn default() -> Self {
        Self {
            tire: 50,
            rim: 205,
            hub: 185,
            window: 40,
            bolt: 80,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WheelSpec {
    /// Wheel center in pixel coordinates.
    pub center: (f64, f64),
    pub px_per_mm: f64,
    pub tire_mm: f64,
    pub rim_mm: f64,
    pub pitch_mm: f64,
    /// Diameter of one bolt head.
    pub bolt_mm: f64,
    pub bolt_count: usize,
    pub tilt_deg: f64,
    pub pattern: SpokePattern,
    /// Rotation of the spoke pattern, radians.
    pub spoke_phase: f64,
    /// Rotation of the bolt circle, radians.
    pub bolt_phase: f64,
    pub intensities: WheelIntensities,
}

impl Default for WheelSpec {
    fn default() -> Self {
        Self {
            center: (0.0, 0.0),
            px_per_mm: 1.0,
            tire_mm: 640.0,
            rim_mm: 430.0,
            pitch_mm: 112.0,
            bolt_mm: 24.0,
            bolt_count: 5,
            tilt_deg: 0.0,
            pattern: SpokePattern::Spokes5,
            spoke_phase: 0.0,
            bolt_phase: 0.0,
            intensities: WheelIntensities::default(),
        }
    }
}

/// Smallest flange inner radius of any pattern, as a fraction of the rim radius.
const FLANGE_INNER_MIN: f64 = 0.72;
/// Angular share of the spoke annulus covered by spokes.
const SPOKE_FILL: f64 = 0.45;

impl WheelSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.center.0,
            self.center.1,
            self.px_per_mm,
            self.tire_mm,
            self.rim_mm,
            self.pitch_mm,
            self.bolt_mm,
            self.spoke_phase,
            self.bolt_phase,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("wheel spec has non-finite values"));
        }
        if !(0.0..=45.0).contains(&self.tilt_deg) {
            return Err(Error::invalid(format!(
                "tilt {} deg outside [0, 45]",
                self.tilt_deg
            )));
        }
        if !(self.px_per_mm > 0.0 && self.bolt_mm > 0.0 && self.pitch_mm > 0.0) {
            return Err(Error::invalid("wheel scale and diameters must be positive"));
        }
        if !(self.rim_mm < self.tire_mm) || !(self.hub_radius_mm() < FLANGE_INNER_MIN * self.rim_mm / 2.0) {
            return Err(Error::invalid(
                "wheel needs pitch circle + bolts < rim flange < tire",
            ));
        }
        if self.bolt_count < 3 {
            return Err(Error::invalid("wheel needs at least 3 bolts"));
        }
        Ok(())
    }

    fn hub_radius_mm(&self) -> f64 {
        self.pitch_mm / 2.0 + self.bolt_mm
    }

    fn cos_tilt(&self) -> f64 {
        self.tilt_deg.to_radians().cos()
    }

    /// Projected circle of radius `r_mm` centered on the wheel axis.
    fn projected(&self, r_mm: f64) -> Ellipse {
        let r = r_mm * self.px_per_mm;
        Ellipse::new(self.center.0, self.center.1, r * self.cos_tilt(), r, 0.0)
            .expect("validated radii are positive")
    }

    fn to_image(&self, x_mm: f64, y_mm: f64) -> (f64, f64) {
        (
            self.center.0 + x_mm * self.px_per_mm * self.cos_tilt(),
            self.center.1 + y_mm * self.px_per_mm,
        )
    }

    pub fn bolt_centers_mm(&self) -> Vec<(f64, f64)> {
        let r = self.pitch_mm / 2.0;
        (0..self.bolt_count)
            .map(|k| {
                let a = self.bolt_phase + std::f64::consts::TAU * k as f64 / self.bolt_count as f64;
                (r * a.cos(), r * a.sin())
            })
            .collect()
    }

    /// Tire bounding box in pixels.
    pub fn bbox(&self) -> BBox {
        let r = self.tire_mm / 2.0 * self.px_per_mm;
        BBox::from_center(self.center.0, self.center.1, 2.0 * r * self.cos_tilt(), 2.0 * r)
            .expect("validated radii are positive")
    }

    pub fn truth(&self) -> WheelTruth {
        WheelTruth {
            bbox: self.bbox(),
            tire: self.projected(self.tire_mm / 2.0),
            rim: self.projected(self.rim_mm / 2.0),
            pitch: self.projected(self.pitch_mm / 2.0),
            bolts: self
                .bolt_centers_mm()
                .into_iter()
                .map(|(x, y)| self.to_image(x, y))
                .collect(),
            class: self.pattern.class(),
            rim_mm: self.rim_mm,
        }
    }

    /// Intensity at a point of the wheel plane, `None` outside the tire.
    fn sample(&self, x: f64, y: f64, bolts: &[(f64, f64)]) -> Option<u8> {
        let c = &self.intensities;
        let r = x.hypot(y);
        let rim_r = self.rim_mm / 2.0;
        if r > self.tire_mm / 2.0 {
            return None;
        }
        if r > rim_r {
            return Some(c.tire);
        }
        let bolt_r = self.bolt_mm / 2.0;
        if bolts
            .iter()
            .any(|(bx, by)| (x - bx).powi(2) + (y - by).powi(2) <= bolt_r * bolt_r)
        {
            return Some(c.bolt);
        }
        if r <= self.hub_radius_mm() || r >= self.pattern.flange_inner() * rim_r {
            return Some(if r <= self.hub_radius_mm() { c.hub } else { c.rim });
        }
        match self.pattern.spokes() {
            None => Some(c.rim),
            Some(n) => {
                let period = std::f64::consts::TAU / n as f64;
                let a = (y.atan2(x) - self.spoke_phase).rem_euclid(period);
                let d = a.min(period - a);
                Some(if d <= SPOKE_FILL * period / 2.0 { c.rim } else { c.window })
            }
        }
    }
}

/// Analytic truth for one rendered wheel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelTruth {
    pub bbox: BBox,
    pub tire: Ellipse,
    pub rim: Ellipse,
    pub pitch: Ellipse,
    pub bolts: Vec<(f64, f64)>,
    pub class: RimClass,
    pub rim_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub floor: u8,
    pub body: u8,
    /// Car body rectangle, if any.
    pub car: Option<BBox>,
    pub wheels: Vec<WheelSpec>,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Subsamples per pixel side for anti-aliasing.
    pub supersample: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            floor: 20,
            body: 95,
            car: None,
            wheels: Vec::new(),
            noise_sigma: 0.0,
            seed: 0,
            supersample: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneTruth {
    pub width: usize,
    pub height: usize,
    pub car: Option<BBox>,
    pub wheels: Vec<WheelTruth>,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.supersample == 0 {
            return Err(Error::invalid("scene needs positive size and supersampling"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be >= 0"));
        }
        for w in &self.wheels {
            w.validate()?;
        }
        Ok(())
    }

    pub fn truth(&self) -> SceneTruth {
        SceneTruth {
            width: self.width,
            height: self.height,
            car: self.car,
            wheels: self.wheels.iter().map(WheelSpec::truth).collect(),
        }
    }

    fn background(&self, x: f64, y: f64) -> u8 {
        match &self.car {
            Some(c) if x >= c.x() && x < c.right() && y >= c.y() && y < c.bottom() => self.body,
            _ => self.floor,
        }
    }

    fn rasterize(&self, noise_stream: u64) -> Result<Image> {
        let (w, h) = (self.width, self.height);
        let ss = self.supersample;
        let n = (ss * ss) as u32;
        let offsets: Vec<f64> = (0..ss).map(|i| (i as f64 + 0.5) / ss as f64 - 0.5).collect();
        let bolts: Vec<Vec<(f64, f64)>> = self.wheels.iter().map(WheelSpec::bolt_centers_mm).collect();
        let boxes: Vec<BBox> = self.wheels.iter().map(WheelSpec::bbox).collect();

        let mut data = vec![0u8; w * h];
        for py in 0..h {
            for px in 0..w {
                let (fx, fy) = (px as f64, py as f64);
                let near_wheel: Vec<usize> = boxes
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| {
                        fx + 0.5 >= b.x() && fx - 0.5 <= b.right() && fy + 0.5 >= b.y() && fy - 0.5 <= b.bottom()
                    })
                    .map(|(i, _)| i)
                    .collect();
                let near_car_edge = self.car.as_ref().is_some_and(|c| {
                    let xs = [c.x(), c.right()];
                    let ys = [c.y(), c.bottom()];
                    xs.iter().any(|e| (e - fx).abs() <= 0.5) || ys.iter().any(|e| (e - fy).abs() <= 0.5)
                });
                if near_wheel.is_empty() && !near_car_edge {
                    data[py * w + px] = self.background(fx, fy);
                    continue;
                }
                let mut acc = 0u32;
                for &oy in &offsets {
                    for &ox in &offsets {
                        let (x, y) = (fx + ox, fy + oy);
                        let mut v = None;
                        // later wheels are drawn on top
                        for &i in near_wheel.iter().rev() {
                            let wh = &self.wheels[i];
                            let xm = (x - wh.center.0) / (wh.px_per_mm * wh.cos_tilt());
                            let ym = (y - wh.center.1) / wh.px_per_mm;
                            if let Some(s) = wh.sample(xm, ym, &bolts[i]) {
                                v = Some(s);
                                break;
                            }
                        }
                        acc += v.unwrap_or_else(|| self.background(x, y)) as u32;
                    }
                }
                data[py * w + px] = ((acc + n / 2) / n) as u8;
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(noise_stream);
            let normal = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::invalid(format!("noise: {e}")))?;
            for v in &mut data {
                let n: f64 = normal.sample(&mut rng);
                *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
            }
        }
        Image::from_raw(w, h, 1, data)
    }
}

/// Renders a still scene. Every wheel must fit inside the image.
pub fn render_wheel(spec: &SceneSpec) -> Result<(Image, SceneTruth)> {
    spec.validate()?;
    for w in &spec.wheels {
        let b = w.bbox();
        if b.w() > spec.width as f64 || b.h() > spec.height as f64 {
            return Err(Error::invalid(format!(
                "wheel of {:.0}x{:.0} px does not fit a {}x{} image",
                b.w(),
                b.h(),
                spec.width,
                spec.height
            )));
        }
    }
    Ok((spec.rasterize(0)?, spec.truth()))
}

/// Truth for one frame of a sequence; objects less than half visible are
/// absent (`None`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame: usize,
    pub car: Option<BBox>,
    pub wheels: Vec<Option<WheelTruth>>,
}

fn visible_fraction(b: &BBox, w: usize, h: usize) -> f64 {
    b.clip(w as f64, h as f64).map_or(0.0, |c| c.area() / b.area())
}

/// The scene translated by `velocity * frame` pixels along x.
pub fn scene_at(spec: &SceneSpec, velocity: f64, frame: usize) -> SceneSpec {
    let dx = velocity * frame as f64;
    let mut s = spec.clone();
    s.car = s.car.map(|c| c.translate(dx, 0.0));
    for w in &mut s.wheels {
        w.center.0 += dx;
    }
    s
}

/// One frame of a linearly moving scene. Noise differs per frame but is
/// fixed by the seed.
pub fn render_frame(spec: &SceneSpec, velocity: f64, frame: usize) -> Result<(Image, FrameTruth)> {
    spec.validate()?;
    let s = scene_at(spec, velocity, frame);
    let img = s.rasterize(frame as u64)?;
    let visible = |b: &BBox| visible_fraction(b, s.width, s.height) >= 0.5;
    let truth = FrameTruth {
        frame,
        car: s.car.filter(|c| visible(c)),
        wheels: s
            .wheels
            .iter()
            .map(|w| {
                let t = w.truth();
                visible(&t.bbox).then_some(t)
            })
            .collect(),
    };
    Ok((img, truth))
}

pub fn render_sequence(
    spec: &SceneSpec,
    frames: usize,
    velocity: f64,
) -> Result<Vec<(Image, FrameTruth)>> {
    if frames == 0 {
        return Err(Error::invalid("sequence needs at least one frame"));
    }
    (0..frames).map(|f| render_frame(spec, velocity, f)).collect()
}

/// A car passing both cameras. Camera A sees the left side (FL, RL), camera
/// B the right side (FR, RR) at nearly the same horizontal positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarPass {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Pixels per frame along +x.
    pub velocity: f64,
    /// Car body left edge in frame 0.
    pub start_x: f64,
    pub car_length: f64,
    pub px_per_mm: f64,
    /// Rim pattern per position, order FL, FR, RL, RR.
    pub patterns: [SpokePattern; 4],
    pub rim_mm: [f64; 4],
    pub tilt_deg: f64,
    /// Horizontal shift of camera B relative to camera A, pixels.
    pub camera_b_offset: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for CarPass {
    fn default() -> Self {
        Self {
            width: 960,
            height: 540,
            frames: 30,
            velocity: 8.0,
            start_x: 150.0,
            car_length: 560.0,
            px_per_mm: 0.25,
            patterns: [SpokePattern::Spokes5; 4],
            rim_mm: [430.0; 4],
            tilt_deg: 0.0,
            camera_b_offset: 6.0,
            noise_sigma: 2.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarPassTruth {
    pub camera_a: Vec<FrameTruth>,
    pub camera_b: Vec<FrameTruth>,
}

impl CarPass {
    fn scene(&self, camera_b: bool) -> SceneSpec {
        let tire_px = 640.0 * self.px_per_mm;
        let car_h = 1.1 * tire_px;
        let wheel_y = self.height as f64 * 0.62;
        let car = BBox::new(self.start_x, wheel_y - car_h * 0.75, self.car_length, car_h)
            .expect("positive car size");
        let dx = if camera_b { self.camera_b_offset } else { 0.0 };
        // rear wheel near the left end of the body, front near the right
        let rear_x = self.start_x + 0.2 * self.car_length + dx;
        let front_x = self.start_x + 0.8 * self.car_length + dx;
        let (front, rear) = if camera_b { (1, 3) } else { (0, 2) };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut wheel = |x: f64, i: usize| WheelSpec {
            center: (x, wheel_y),
            px_per_mm: self.px_per_mm,
            rim_mm: self.rim_mm[i],
            tilt_deg: self.tilt_deg,
            pattern: self.patterns[i],
            spoke_phase: rng.random_range(0.0..std::f64::consts::TAU),
            bolt_phase: rng.random_range(0.0..std::f64::consts::TAU),
            ..WheelSpec::default()
        };
        let mut wheels = vec![wheel(rear_x, rear), wheel(front_x, front)];
        if camera_b {
            wheels.reverse();
        }
        SceneSpec {
            width: self.width,
            height: self.height,
            car: Some(car.translate(dx, 0.0)),
            wheels,
            noise_sigma: self.noise_sigma,
            seed: self.seed.wrapping_add(if camera_b { 1 } else { 0 }),
            ..SceneSpec::default()
        }
    }

    pub fn scene_a(&self) -> SceneSpec {
        self.scene(false)
    }

    pub fn scene_b(&self) -> SceneSpec {
        self.scene(true)
    }

    /// Renders both cameras' frame sequences.
    pub fn render(&self) -> Result<(Vec<Image>, Vec<Image>, CarPassTruth)> {
        let (a, ta): (Vec<Image>, Vec<FrameTruth>) =
            render_sequence(&self.scene_a(), self.frames, self.velocity)?
                .into_iter()
                .unzip();
        let (b, tb): (Vec<Image>, Vec<FrameTruth>) =
            render_sequence(&self.scene_b(), self.frames, self.velocity)?
                .into_iter()
                .unzip();
        Ok((
            a,
            b,
            CarPassTruth {
                camera_a: ta,
                camera_b: tb,
            },
        ))
    }
}

/// Settings for a labeled crop set (one centered wheel per square image).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropSetSpec {
    pub side: usize,
    pub per_class: usize,
    pub max_tilt_deg: f64,
    pub max_noise: f64,
    /// Center jitter as a fraction of the side.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for CropSetSpec {
    fn default() -> Self {
        Self {
            side: 256,
            per_class: 40,
            max_tilt_deg: 30.0,
            max_noise: 8.0,
            jitter: 0.02,
            seed: 0,
        }
    }
}

/// Renders `per_class` crops of every built-in pattern with random spoke
/// rotation, tilt, noise and jitter. Order: class-major.
pub fn render_crop_set(spec: &CropSetSpec) -> Result<Vec<(Image, RimClass)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let side = spec.side as f64;
    let mut out = Vec::with_capacity(5 * spec.per_class);
    for pattern in SpokePattern::ALL {
        for _ in 0..spec.per_class {
            let j = spec.jitter * side;
            let wheel = WheelSpec {
                center: (
                    (side - 1.0) / 2.0 + rng.random_range(-j..=j),
                    (side - 1.0) / 2.0 + rng.random_range(-j..=j),
                ),
                px_per_mm: side / 640.0 * rng.random_range(0.95..=1.0),
                tilt_deg: rng.random_range(0.0..=spec.max_tilt_deg),
                pattern,
                spoke_phase: rng.random_range(0.0..std::f64::consts::TAU),
                bolt_phase: rng.random_range(0.0..std::f64::consts::TAU),
                ..WheelSpec::default()
            };
            let scene = SceneSpec {
                width: spec.side,
                height: spec.side,
                body: if rng.random_bool(0.5) { 95 } else { 20 },
                car: Some(BBox::new(-1.0, -1.0, side + 2.0, side * 0.3).expect("positive")),
                wheels: vec![wheel],
                noise_sigma: rng.random_range(0.0..=spec.max_noise),
                seed: rng.random(),
                supersample: 2,
                ..SceneSpec::default()
            };
            out.push((scene.rasterize(0)?, pattern.class()));
        }
    }
    Ok(out)
}

/// Settings for a set of still multi-wheel scenes (detector evaluation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSetSpec {
    pub width: usize,
    pub height: usize,
    pub count: usize,
    /// Tyre radius range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    pub max_wheels: usize,
    pub max_tilt_deg: f64,
    pub max_noise: f64,
    pub seed: u64,
}

impl Default for SceneSetSpec {
    fn default() -> Self {
        Self {
            width: 960,
            height: 540,
            count: 100,
            min_radius: 20.0,
            max_radius: 100.0,
            max_wheels: 3,
            max_tilt_deg: 20.0,
            max_noise: 8.0,
            seed: 0,
        }
    }
}

/// Renders `count` scenes of 1..=max_wheels non-overlapping wheels on a
/// random flat background. Wheels lie fully inside the frame.
pub fn render_scene_set(spec: &SceneSetSpec) -> Result<Vec<(Image, SceneTruth)>> {
    if !(spec.min_radius > 0.0 && spec.min_radius <= spec.max_radius) || spec.max_wheels == 0 {
        return Err(Error::invalid("scene set needs 0 < min_radius <= max_radius and max_wheels >= 1"));
    }
    if 2.0 * spec.max_radius + 2.0 > spec.width.min(spec.height) as f64 {
        return Err(Error::invalid("max_radius does not fit the frame"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut out = Vec::with_capacity(spec.count);
    for _ in 0..spec.count {
        let want = rng.random_range(1..=spec.max_wheels);
        let mut wheels: Vec<WheelSpec> = Vec::new();
        let mut placed: Vec<(f64, f64, f64)> = Vec::new();
        for _ in 0..200 {
            if wheels.len() == want {
                break;
            }
            let r = rng.random_range(spec.min_radius..=spec.max_radius);
            let cx = rng.random_range(r + 1.0..=w - r - 1.0);
            let cy = rng.random_range(r + 1.0..=h - r - 1.0);
            if placed.iter().any(|&(x, y, q)| (x - cx).hypot(y - cy) < r + q + 4.0) {
                continue;
            }
            placed.push((cx, cy, r));
            wheels.push(WheelSpec {
                center: (cx, cy),
                px_per_mm: r / 320.0,
                tilt_deg: rng.random_range(0.0..=spec.max_tilt_deg),
                pattern: SpokePattern::ALL[rng.random_range(0..SpokePattern::ALL.len())],
                spoke_phase: rng.random_range(0.0..std::f64::consts::TAU),
                bolt_phase: rng.random_range(0.0..std::f64::consts::TAU),
                ..WheelSpec::default()
            });
        }
        let scene = SceneSpec {
            width: spec.width,
            height: spec.height,
            floor: rng.random_range(100..=160),
            wheels,
            noise_sigma: rng.random_range(0.0..=spec.max_noise),
            seed: rng.random(),
            supersample: 2,
            ..SceneSpec::default()
        };
        out.push(render_wheel(&scene)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_set_wheels_inside_and_apart() {
        let spec = SceneSetSpec {
            width: 320,
            height: 240,
            count: 6,
            min_radius: 15.0,
            max_radius: 40.0,
            ..SceneSetSpec::default()
        };
        let set = render_scene_set(&spec).unwrap();
        assert_eq!(set.len(), 6);
        for (img, t) in &set {
            assert_eq!((img.width(), img.height()), (320, 240));
            assert!(!t.wheels.is_empty());
            for (i, a) in t.wheels.iter().enumerate() {
                assert!(a.bbox.x() >= 0.0 && a.bbox.right() <= 320.0);
                assert!(a.bbox.y() >= 0.0 && a.bbox.bottom() <= 240.0);
                for b in &t.wheels[i + 1..] {
                    assert!((a.tire.cx - b.tire.cx).hypot(a.tire.cy - b.tire.cy) > a.tire.a + b.tire.a);
                }
            }
        }
        assert_eq!(render_scene_set(&spec).unwrap()[3].0.data(), set[3].0.data());
    }

    fn one_wheel(tilt: f64) -> SceneSpec {
        SceneSpec {
            width: 700,
            height: 700,
            wheels: vec![WheelSpec {
                center: (350.0, 350.0),
                tilt_deg: tilt,
                ..WheelSpec::default()
            }],
            ..SceneSpec::default()
        }
    }

    #[test]
    fn untilted_truth_is_circular() {
        let mut s = one_wheel(0.0);
        s.wheels[0].rim_mm = 400.0;
        let t = s.truth();
        assert_eq!((t.wheels[0].rim.a, t.wheels[0].rim.b), (200.0, 200.0));
    }

    #[test]
    fn tilt_foreshortens_x() {
        let mut s = one_wheel(30.0);
        s.wheels[0].rim_mm = 400.0;
        let r = s.truth().wheels[0].rim;
        assert!((r.a - 200.0).abs() < 1e-12);
        assert!((r.b - 173.2).abs() < 0.01);
        assert!((r.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn bolts_lie_on_pitch_ellipse() {
        let s = one_wheel(25.0);
        let t = &s.truth().wheels[0];
        let c = t.pitch.to_conic();
        for &(x, y) in &t.bolts {
            assert!((c.eval(x, y) / c.coefficients()[5]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_and_seeded() {
        let mut s = one_wheel(10.0);
        s.width = 200;
        s.height = 200;
        s.wheels[0].center = (100.0, 100.0);
        s.wheels[0].px_per_mm = 0.25;
        s.noise_sigma = 5.0;
        s.seed = 7;
        let (a, _) = render_wheel(&s).unwrap();
        let (b, _) = render_wheel(&s).unwrap();
        assert_eq!(a, b);
        s.seed = 8;
        assert_ne!(render_wheel(&s).unwrap().0, a);
    }

    #[test]
    fn oversize_wheel_rejected() {
        let mut s = one_wheel(0.0);
        s.width = 300;
        assert!(render_wheel(&s).is_err());
        let mut s = one_wheel(50.0);
        s.width = 700;
        assert!(render_wheel(&s).is_err());
    }

    #[test]
    fn rendered_regions_have_their_intensity() {
        let s = one_wheel(0.0);
        let (img, _) = render_wheel(&s).unwrap();
        let c = WheelIntensities::default();
        assert_eq!(img.get(350 + 260, 350), c.tire);
        assert_eq!(img.get(350 + 200, 350), c.rim);
        assert_eq!(img.get(350, 350), c.hub);
        assert_eq!(img.get(5, 5), s.floor);
        // first bolt at phase 0 sits on +x
        assert_eq!(img.get(350 + 56, 350), c.bolt);
    }

    #[test]
    fn sequence_motion_and_exit() {
        let spec = SceneSpec {
            width: 200,
            height: 120,
            wheels: vec![WheelSpec {
                center: (60.0, 60.0),
                px_per_mm: 0.15,
                ..WheelSpec::default()
            }],
            supersample: 1,
            ..SceneSpec::default()
        };
        let still = render_sequence(&spec, 3, 0.0).unwrap();
        assert_eq!(still[0].0, still[2].0);

        let seq = render_sequence(&spec, 20, 10.0).unwrap();
        let xs: Vec<Option<f64>> = seq
            .iter()
            .map(|(_, t)| t.wheels[0].as_ref().map(|w| w.bbox.x()))
            .collect();
        assert!((xs[1].unwrap() - xs[0].unwrap() - 10.0).abs() < 1e-9);
        // 96 px box centered at 60 + 10k is under half visible once k > 14
        assert_eq!(xs.iter().position(Option::is_none), Some(15));
        assert!(xs[15..].iter().all(Option::is_none));
        assert!(render_sequence(&spec, 0, 1.0).is_err());
    }

    #[test]
    fn crop_set_is_reproducible() {
        let spec = CropSetSpec {
            per_class: 2,
            side: 64,
            ..CropSetSpec::default()
        };
        let a = render_crop_set(&spec).unwrap();
        let b = render_crop_set(&spec).unwrap();
        assert_eq!(a.len(), 10);
        assert!(a.iter().zip(&b).all(|(x, y)| x == y));
        assert_eq!(a[9].1, SpokePattern::Solid.class());
    }
}
