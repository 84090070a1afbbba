//! Geometric and label primitives shared by every stage.
//!
//! Pixel coordinates use a top-left origin with pixel `(i, j)` centered at
//! integer coordinates `(i, j)`.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x, y, w, h)` in pixels, `(x, y)` being the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid(format!(
                "bbox has non-finite coordinates ({x}, {y}, {w}, {h})"
            )));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!(
                "bbox must have positive size, got w={w} h={h}"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn contains_point(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.right() && py >= self.y && py <= self.bottom()
    }

    /// Area of the overlap with `other`, zero when disjoint.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }

    /// Clips the box to `[0, width] x [0, height]`; `None` when nothing remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        BBox::new(x0, y0, x1 - x0, y1 - y0).ok()
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;
    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A scored circle as produced by the Hough detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub score: f64,
}

impl Circle {
    pub fn new(cx: f64, cy: f64, r: f64, score: f64) -> Result<Self> {
        if !(r > 0.0) || !cx.is_finite() || !cy.is_finite() || !r.is_finite() {
            return Err(Error::invalid(format!("circle radius must be > 0, got {r}")));
        }
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!("circle score {score} outside [0, 1]")));
        }
        Ok(Self { cx, cy, r, score })
    }
}

/// Ellipse in canonical parametric form: `a >= b > 0`, `theta` in `[0, pi)`
/// measured from the +x axis to the major axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl Ellipse {
    /// Builds the canonical form, swapping axes (and rotating by pi/2) when
    /// `a < b`. Circles get `theta = 0`.
    pub fn new(cx: f64, cy: f64, a: f64, b: f64, theta: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(Error::invalid(format!(
                "ellipse axes must be positive, got a={a} b={b}"
            )));
        }
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(Error::invalid("ellipse has non-finite parameters"));
        }
        let (a, b, theta) = if a < b {
            (b, a, theta + PI / 2.0)
        } else {
            (a, b, theta)
        };
        let theta = if a == b { 0.0 } else { normalize_angle(theta) };
        Ok(Self {
            cx,
            cy,
            a,
            b,
            theta,
        })
    }

    pub fn eccentricity(&self) -> f64 {
        (1.0 - (self.b * self.b) / (self.a * self.a)).max(0.0).sqrt()
    }

    /// Point at parameter `t` (radians) along the ellipse.
    pub fn point_at(&self, t: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        let (u, v) = (self.a * t.cos(), self.b * t.sin());
        (self.cx + u * c - v * s, self.cy + u * s + v * c)
    }

    pub fn to_conic(&self) -> Conic {
        parametric_to_conic(self)
    }
}

/// Wraps an angle into `[0, pi)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly PI
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Acute angle between two undirected axis orientations, in `[0, pi/2]`.
pub fn axis_angle_difference(t1: f64, t2: f64) -> f64 {
    let d = normalize_angle(t1 - t2);
    d.min(PI - d)
}

/// General conic `A x^2 + B xy + C y^2 + D x + E y + F = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Conic {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl Conic {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> Result<Self> {
        let all = [a, b, c, d, e, f];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("conic has non-finite coefficients"));
        }
        if a == 0.0 && b == 0.0 && c == 0.0 {
            return Err(Error::invalid("conic has no quadratic part"));
        }
        Ok(Self { a, b, c, d, e, f })
    }

    /// `B^2 - 4AC`; negative for ellipses.
    pub fn discriminant(&self) -> f64 {
        self.b * self.b - 4.0 * self.a * self.c
    }

    pub fn coefficients(&self) -> [f64; 6] {
        [self.a, self.b, self.c, self.d, self.e, self.f]
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.a * x * x + self.b * x * y + self.c * y * y + self.d * x + self.e * y + self.f
    }

    /// Same conic scaled by `k`.
    pub fn scaled(&self, k: f64) -> Conic {
        Conic {
            a: self.a * k,
            b: self.b * k,
            c: self.c * k,
            d: self.d * k,
            e: self.e * k,
            f: self.f * k,
        }
    }
}

pub fn parametric_to_conic(el: &Ellipse) -> Conic {
    let (s, c) = el.theta.sin_cos();
    let (a2, b2) = (el.a * el.a, el.b * el.b);
    let (h, k) = (el.cx, el.cy);
    let qa = a2 * s * s + b2 * c * c;
    let qb = 2.0 * (b2 - a2) * s * c;
    let qc = a2 * c * c + b2 * s * s;
    Conic {
        a: qa,
        b: qb,
        c: qc,
        d: -2.0 * qa * h - qb * k,
        e: -qb * h - 2.0 * qc * k,
        f: qa * h * h + qb * h * k + qc * k * k - a2 * b2,
    }
}

/// Converts an ellipse conic to center, semi-axes and orientation.
pub fn conic_to_parametric(conic: &Conic) -> Result<Ellipse> {
    let disc = conic.discriminant();
    if !(disc < 0.0) {
        return Err(Error::Degenerate(format!(
            "conic is not an ellipse (B^2-4AC = {disc})"
        )));
    }
    // make the quadratic form positive definite
    let q = if conic.a + conic.c < 0.0 {
        conic.scaled(-1.0)
    } else {
        *conic
    };
    let det = -disc; // 4AC - B^2 > 0
    let x0 = (q.b * q.e - 2.0 * q.c * q.d) / det;
    let y0 = (q.b * q.d - 2.0 * q.a * q.e) / det;
    let f0 = q.f + (q.d * x0 + q.e * y0) / 2.0;
    if !(f0 < 0.0) {
        return Err(Error::Degenerate(
            "conic describes an empty or point ellipse".into(),
        ));
    }
    let mean = (q.a + q.c) / 2.0;
    let half_diff = ((q.a - q.c) / 2.0).hypot(q.b / 2.0);
    let l_small = mean - half_diff;
    let l_large = mean + half_diff;
    if !(l_small > 0.0) {
        return Err(Error::Numerical(
            "ellipse quadratic form lost positive definiteness".into(),
        ));
    }
    let a = (-f0 / l_small).sqrt();
    let b = (-f0 / l_large).sqrt();
    // atan2 gives twice the direction of the large-eigenvalue axis; the major
    // axis is perpendicular to it.
    let theta = 0.5 * q.b.atan2(q.a - q.c) + PI / 2.0;
    Ellipse::new(x0, y0, a, b, theta)
}

/// Object categories handled by the detectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Car,
    Wheel,
    Bolt,
    Rim,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::Car, Label::Wheel, Label::Bolt, Label::Rim];

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Car => "car",
            Label::Wheel => "wheel",
            Label::Bolt => "bolt",
            Label::Rim => "rim",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "car" => Ok(Label::Car),
            "wheel" => Ok(Label::Wheel),
            "bolt" => Ok(Label::Bolt),
            "rim" => Ok(Label::Rim),
            other => Err(Error::invalid(format!("unknown label '{other}'"))),
        }
    }
}

/// A scored localization in one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub label: Label,
    pub bbox: BBox,
    pub score: f64,
}

impl Detection {
    pub fn new(frame: usize, label: Label, bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::invalid(format!(
                "detection score {score} outside [0, 1]"
            )));
        }
        Ok(Self {
            frame,
            label,
            bbox,
            score,
        })
    }
}

/// Number of rim categories including the occlusion category 0.
pub const NUM_RIM_CLASSES: usize = 22;

/// Rim category id. Id 0 marks an occluded or unclassifiable rim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct RimClass(u8);

impl RimClass {
    pub const OCCLUDED: RimClass = RimClass(0);

    pub fn new(id: u8) -> Result<Self> {
        if (id as usize) < NUM_RIM_CLASSES {
            Ok(Self(id))
        } else {
            Err(Error::invalid(format!("rim class id {id} outside 0..=21")))
        }
    }

    pub fn id(&self) -> u8 {
        self.0
    }

    pub fn is_occluded(&self) -> bool {
        self.0 == 0
    }
}

impl TryFrom<u8> for RimClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        RimClass::new(v)
    }
}

impl From<RimClass> for u8 {
    fn from(c: RimClass) -> u8 {
        c.0
    }
}

impl fmt::Display for RimClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{:02}", self.0)
    }
}
