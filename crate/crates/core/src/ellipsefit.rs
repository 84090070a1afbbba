//! Rim-size estimation from two ellipses.
//!
//! The rim contour is sampled by casting rays inward from the four edges of a
//! binarized wheel crop; the bolt centers give a second ellipse whose true
//! diameter (the pitch circle) is known. Under orthographic projection,
//! concentric coplanar circles map to ellipses with the same major-to-major
//! ratio as the circles' diameters, which anchors the millimeter scale.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{axis_angle_difference, conic_to_parametric, Conic, Detection, Ellipse};
use crate::hough::{detect_circles_with_stats, HoughConfig, Roi};
use crate::image::Image;
use crate::imgproc::{gaussian_blur, otsu_threshold};

/// Direct least-squares ellipse fit with the numerically stable split of the
/// design matrix into quadratic and linear blocks.
///
/// The returned conic is scaled so that `4AC - B^2 = 1` and `A + C > 0`.
pub fn fit_ellipse_direct(points: &[(f64, f64)]) -> Result<Conic> {
    if points.len() < 5 {
        return Err(Error::Degenerate(format!(
            "ellipse fit needs at least 5 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("ellipse fit got non-finite points"));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let rms = (points
        .iter()
        .map(|(x, y)| (x - mx).powi(2) + (y - my).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    if !(rms > 0.0) {
        return Err(Error::Degenerate("ellipse fit points are coincident".into()));
    }
    let s = rms / std::f64::consts::SQRT_2;

    let mut s1 = Matrix3::<f64>::zeros();
    let mut s2 = Matrix3::<f64>::zeros();
    let mut s3 = Matrix3::<f64>::zeros();
    for &(x, y) in points {
        let (u, v) = ((x - mx) / s, (y - my) / s);
        let quad = Vector3::new(u * u, u * v, v * v);
        let lin = Vector3::new(u, v, 1.0);
        s1 += quad * quad.transpose();
        s2 += quad * lin.transpose();
        s3 += lin * lin.transpose();
    }
    let sv = s3.singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Degenerate("ellipse fit points are collinear".into()));
    }
    let s3_inv = s3
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("ellipse fit points are collinear".into()))?;
    let t = -(s3_inv * s2.transpose());
    let m = s1 + s2 * t;
    // premultiply by the inverse of the 3x3 constraint block
    let reduced = Matrix3::from_rows(&[
        m.row(2) / 2.0,
        -m.row(1),
        m.row(0) / 2.0,
    ]);

    let eigenvalues = reduced.complex_eigenvalues();
    let scale = reduced.abs().max().max(f64::MIN_POSITIVE);
    let mut best: Option<(f64, Vector3<f64>)> = None;
    for lambda in eigenvalues.iter() {
        if lambda.im.abs() > 1e-8 * scale {
            continue;
        }
        let shifted = reduced - Matrix3::identity() * lambda.re;
        let svd = shifted.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Numerical("SVD failed in ellipse fit".into()))?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let a1: Vector3<f64> = v_t.row(imin).transpose();
        let cond = 4.0 * a1[0] * a1[2] - a1[1] * a1[1];
        if cond <= 0.0 {
            continue;
        }
        let a2 = t * a1;
        // algebraic residual of the full 6-vector, normalized by the constraint
        let resid: f64 = points
            .iter()
            .map(|&(x, y)| {
                let (u, v) = ((x - mx) / s, (y - my) / s);
                let r = a1[0] * u * u + a1[1] * u * v + a1[2] * v * v + a2[0] * u + a2[1] * v + a2[2];
                r * r
            })
            .sum::<f64>()
            / cond;
        if best.as_ref().is_none_or(|(r, _)| resid < *r) {
            best = Some((resid, a1));
        }
    }
    let (_, a1) = best.ok_or_else(|| {
        Error::Numerical("no eigenvector satisfies the ellipse constraint".into())
    })?;
    let a2 = t * a1;

    let (a, b, c, d, e, f) = (a1[0], a1[1], a1[2], a2[0], a2[1], a2[2]);
    let s2i = 1.0 / (s * s);
    let ca = a * s2i;
    let cb = b * s2i;
    let cc = c * s2i;
    let cd = (-2.0 * a * mx - b * my) * s2i + d / s;
    let ce = (-b * mx - 2.0 * c * my) * s2i + e / s;
    let cf = (a * mx * mx + b * mx * my + c * my * my) * s2i - (d * mx + e * my) / s + f;
    let conic = Conic::new(ca, cb, cc, cd, ce, cf)?;
    let k = 1.0 / (-conic.discriminant()).sqrt();
    let k = if ca + cc < 0.0 { -k } else { k };
    Ok(conic.scaled(k))
}

/// Fits and converts to parametric form.
pub fn fit_ellipse(points: &[(f64, f64)]) -> Result<Ellipse> {
    conic_to_parametric(&fit_ellipse_direct(points)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaycastConfig {
    /// Ray spacing as a fraction of the edge length.
    pub spacing: f64,
    pub rays_per_edge: usize,
}

impl Default for RaycastConfig {
    fn default() -> Self {
        Self {
            spacing: 0.10,
            rays_per_edge: 9,
        }
    }
}

impl RaycastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0 && self.spacing <= 0.5) || self.rays_per_edge < 1 {
            return Err(Error::invalid(format!(
                "raycast needs 0 < spacing <= 0.5 and rays_per_edge >= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Ray offsets from the edge midpoint, as multiples of `spacing * length`.
    fn offsets(&self) -> impl Iterator<Item = f64> + '_ {
        let half = (self.rays_per_edge as f64 - 1.0) / 2.0;
        (0..self.rays_per_edge).map(move |k| k as f64 - half)
    }
}

/// First white pixel met by one ray and the unit step the ray travels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RayHit {
    pub pixel: (usize, usize),
    pub step: (isize, isize),
}

impl RayHit {
    /// Where the ray enters the pixel: half a pixel before its center.
    pub fn entry(&self) -> (f64, f64) {
        (
            self.pixel.0 as f64 - 0.5 * self.step.0 as f64,
            self.pixel.1 as f64 - 0.5 * self.step.1 as f64,
        )
    }
}

/// Casts rays inward from each image edge (top, right, bottom, left;
/// offsets ascending) and keeps the first white pixel of each.
pub fn raycast_hits(binary: &Image, cfg: &RaycastConfig) -> Result<Vec<RayHit>> {
    binary.require_gray("raycast_contour")?;
    cfg.validate()?;
    let (w, h) = (binary.width(), binary.height());
    let mut out = Vec::with_capacity(4 * cfg.rays_per_edge);
    let line = |mid: f64, len: usize, k: f64| -> Option<usize> {
        let pos = (mid + k * cfg.spacing * len as f64).round();
        (pos >= 0.0 && pos < len as f64).then_some(pos as usize)
    };
    let white = |x: usize, y: usize| binary.get(x, y) > 0;
    let mid_x = (w as f64 - 1.0) / 2.0;
    let mid_y = (h as f64 - 1.0) / 2.0;
    let mut push = |pixel: Option<(usize, usize)>, step| {
        if let Some(pixel) = pixel {
            out.push(RayHit { pixel, step });
        }
    };

    for k in cfg.offsets() {
        if let Some(x) = line(mid_x, w, k) {
            push((0..h).find(|&y| white(x, y)).map(|y| (x, y)), (0, 1));
        }
    }
    for k in cfg.offsets() {
        if let Some(y) = line(mid_y, h, k) {
            push((0..w).rev().find(|&x| white(x, y)).map(|x| (x, y)), (-1, 0));
        }
    }
    for k in cfg.offsets() {
        if let Some(x) = line(mid_x, w, k) {
            push((0..h).rev().find(|&y| white(x, y)).map(|y| (x, y)), (0, -1));
        }
    }
    for k in cfg.offsets() {
        if let Some(y) = line(mid_y, h, k) {
            push((0..w).find(|&x| white(x, y)).map(|x| (x, y)), (1, 0));
        }
    }
    Ok(out)
}

/// Samples the outer contour of the white region by casting rays inward from
/// each image edge (top, right, bottom, left; offsets ascending).
///
/// A ray records the point where it enters its first white pixel, i.e. half
/// a pixel before that pixel's center along the ray. Rays that cross the
/// image without a hit contribute nothing.
pub fn raycast_contour(binary: &Image, cfg: &RaycastConfig) -> Result<Vec<(f64, f64)>> {
    Ok(raycast_hits(binary, cfg)?.iter().map(RayHit::entry).collect())
}

/// Samples checked on each side of a hit by [`refine_hits`].
const REFINE_REACH: isize = 3;

/// Moves each hit to sub-pixel accuracy: the point along its ray where the
/// gray profile crosses halfway between the level `REFINE_REACH` pixels
/// outside and the level as far inside. Hits without a clear step, or whose
/// window leaves the image, keep their pixel entry point.
pub fn refine_hits(gray: &Image, hits: &[RayHit]) -> Vec<(f64, f64)> {
    let (w, h) = (gray.width() as isize, gray.height() as isize);
    hits.iter()
        .map(|hit| {
            let at = |j: isize| -> Option<f64> {
                let x = hit.pixel.0 as isize + j * hit.step.0;
                let y = hit.pixel.1 as isize + j * hit.step.1;
                (x >= 0 && y >= 0 && x < w && y < h).then(|| gray.get(x as usize, y as usize) as f64)
            };
            let profile: Option<Vec<f64>> = (-REFINE_REACH..=REFINE_REACH).map(at).collect();
            let crossing = profile.and_then(|g| {
                let (outside, inside) = (g[0], g[g.len() - 1]);
                if inside - outside < 10.0 {
                    return None;
                }
                let level = (outside + inside) / 2.0;
                // crossing nearest the pixel boundary at offset -0.5
                (0..g.len() - 1)
                    .filter(|&i| g[i] < level && g[i + 1] >= level)
                    .map(|i| i as f64 - REFINE_REACH as f64 + (level - g[i]) / (g[i + 1] - g[i]))
                    .min_by(|a, b| (a + 0.5).abs().total_cmp(&(b + 0.5).abs()))
            });
            match crossing {
                Some(t) => (
                    hit.pixel.0 as f64 + t * hit.step.0 as f64,
                    hit.pixel.1 as f64 + t * hit.step.1 as f64,
                ),
                None => hit.entry(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PitchCircleSpec {
    pub diameter_mm: f64,
    pub bolt_count: usize,
}

impl Default for PitchCircleSpec {
    fn default() -> Self {
        Self {
            diameter_mm: 112.0,
            bolt_count: 5,
        }
    }
}

impl PitchCircleSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.diameter_mm > 0.0) || self.bolt_count < 5 {
            return Err(Error::invalid(format!(
                "pitch circle needs diameter_mm > 0 and bolt_count >= 5, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Ellipse through the bolt centers.
pub fn pitch_ellipse(bolts: &[Detection], spec: &PitchCircleSpec) -> Result<Ellipse> {
    let centers: Vec<(f64, f64)> = bolts.iter().map(|d| d.bbox.center()).collect();
    pitch_ellipse_from_centers(&centers, spec)
}

pub fn pitch_ellipse_from_centers(centers: &[(f64, f64)], spec: &PitchCircleSpec) -> Result<Ellipse> {
    spec.validate()?;
    if centers.len() < spec.bolt_count {
        return Err(Error::InsufficientBolts {
            found: centers.len(),
            needed: spec.bolt_count,
        });
    }
    fit_ellipse(centers)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeEstimate {
    pub rim: Ellipse,
    pub pitch: Ellipse,
    pub diameter_mm: f64,
    pub confidence: f64,
}

/// Eccentricity below which an ellipse's orientation is ignored.
const NEAR_CIRCULAR: f64 = 0.1;

/// Agreement of two ellipses from one wheel: `exp(-(dtheta/0.2)^2 - (de/0.1)^2)`.
pub fn ellipse_agreement(rim: &Ellipse, pitch: &Ellipse) -> f64 {
    let (er, ep) = (rim.eccentricity(), pitch.eccentricity());
    let dtheta = if er < NEAR_CIRCULAR || ep < NEAR_CIRCULAR {
        0.0
    } else {
        axis_angle_difference(rim.theta, pitch.theta)
    };
    let de = (er - ep).abs();
    (-(dtheta / 0.2).powi(2) - (de / 0.1).powi(2)).exp()
}

/// Rim diameter from the major-axis ratio of the rim and pitch ellipses.
pub fn estimate_rim_diameter(
    rim: &Ellipse,
    pitch: &Ellipse,
    spec: &PitchCircleSpec,
) -> Result<SizeEstimate> {
    spec.validate()?;
    if !(pitch.a > 1e-9) {
        return Err(Error::Degenerate("pitch ellipse has zero size".into()));
    }
    if rim.a < pitch.a {
        return Err(Error::invalid(format!(
            "rim ellipse (a={:.2}) smaller than pitch ellipse (a={:.2})",
            rim.a, pitch.a
        )));
    }
    Ok(SizeEstimate {
        rim: *rim,
        pitch: *pitch,
        diameter_mm: spec.diameter_mm * rim.a / pitch.a,
        confidence: ellipse_agreement(rim, pitch),
    })
}

/// Settings for the full per-crop size measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SizeConfig {
    pub spacing: f64,
    pub rays_per_edge: usize,
    pub diameter_mm: f64,
    pub bolt_count: usize,
    /// Blur applied to the crop before Otsu.
    pub blur_sigma: f64,
    /// Fraction of the crop side searched for bolt centers.
    pub bolt_search_fraction: f64,
}

impl Default for SizeConfig {
    fn default() -> Self {
        let r = RaycastConfig::default();
        let p = PitchCircleSpec::default();
        Self {
            spacing: r.spacing,
            rays_per_edge: r.rays_per_edge,
            diameter_mm: p.diameter_mm,
            bolt_count: p.bolt_count,
            blur_sigma: 1.0,
            bolt_search_fraction: 0.6,
        }
    }
}

impl SizeConfig {
    pub fn raycast(&self) -> RaycastConfig {
        RaycastConfig {
            spacing: self.spacing,
            rays_per_edge: self.rays_per_edge,
        }
    }
    pub fn pitch(&self) -> PitchCircleSpec {
        PitchCircleSpec {
            diameter_mm: self.diameter_mm,
            bolt_count: self.bolt_count,
        }
    }
}

/// Everything measured on one wheel crop.
#[derive(Debug, Clone, PartialEq)]
pub struct CropMeasurement {
    pub estimate: SizeEstimate,
    pub contour: Vec<(f64, f64)>,
    pub bolt_centers: Vec<(f64, f64)>,
    pub threshold: u8,
}

/// Rim ellipse of a gray wheel crop: blur, Otsu, ray casting, sub-pixel
/// refinement of the ray hits, direct fit.
pub fn rim_ellipse_from_crop(gray: &Image, cfg: &SizeConfig) -> Result<(Ellipse, Vec<(f64, f64)>, u8)> {
    let blurred = gaussian_blur(gray, cfg.blur_sigma)?;
    let otsu = otsu_threshold(&blurred)?;
    if otsu.degenerate {
        return Err(Error::Degenerate("wheel crop has a single intensity".into()));
    }
    let hits = raycast_hits(&otsu.binary, &cfg.raycast())?;
    let contour = refine_hits(&blurred, &hits);
    if contour.is_empty() {
        return Err(Error::Degenerate("no ray hit the rim".into()));
    }
    let rim = fit_ellipse(&contour)?;
    Ok((rim, contour, otsu.threshold))
}

/// Classical bolt finder: Hough bolt preset inside the central part of the crop.
/// Returns the `bolt_count` best circle centers.
pub fn find_bolts(gray: &Image, cfg: &SizeConfig) -> Result<Vec<(f64, f64)>> {
    let side = gray.width().min(gray.height());
    let blurred = gaussian_blur(gray, cfg.blur_sigma)?;
    let roi = Roi::inner(side, cfg.bolt_search_fraction);
    let (circles, _) =
        detect_circles_with_stats(&blurred, &HoughConfig::bolt_preset(side), Some(roi))?;
    Ok(circles
        .iter()
        .take(cfg.bolt_count)
        .map(|c| refine_blob_center(&blurred, (c.cx, c.cy), c.r))
        .collect())
}

/// Moves a dark-blob center estimate to the blob's intensity centroid.
///
/// Pixels within `1.5 r` get weight `(bg - v) / (bg - fg)` clamped to
/// `[0, 1]`, with `bg` the median of the outer ring and `fg` the darkest
/// decile of the inner disk. Centroids survive affine maps, so a tilted
/// (elliptical) bolt is centered correctly where a circle fit is biased.
pub fn refine_blob_center(gray: &Image, center: (f64, f64), r: f64) -> (f64, f64) {
    let mut c = center;
    for _ in 0..2 {
        match blob_centroid(gray, c, r) {
            Some(next) => c = next,
            None => break,
        }
    }
    c
}

fn blob_centroid(gray: &Image, (cx, cy): (f64, f64), r: f64) -> Option<(f64, f64)> {
    let outer = 1.5 * r;
    let (w, h) = (gray.width() as isize, gray.height() as isize);
    let x0 = (cx - outer).floor().max(0.0) as isize;
    let x1 = ((cx + outer).ceil() as isize).min(w - 1);
    let y0 = (cy - outer).floor().max(0.0) as isize;
    let y1 = ((cy + outer).ceil() as isize).min(h - 1);
    let mut ring = Vec::new();
    let mut inner = Vec::new();
    let mut pixels = Vec::new();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = (x as f64 - cx).hypot(y as f64 - cy);
            if d > outer {
                continue;
            }
            let v = gray.get(x as usize, y as usize) as f64;
            if d >= 1.25 * r {
                ring.push(v);
            } else if d <= 0.5 * r {
                inner.push(v);
            }
            pixels.push((x as f64, y as f64, v));
        }
    }
    if ring.is_empty() || inner.is_empty() {
        return None;
    }
    ring.sort_by(f64::total_cmp);
    inner.sort_by(f64::total_cmp);
    let bg = ring[ring.len() / 2];
    let fg = inner[inner.len() / 10];
    if bg - fg < 10.0 {
        return None;
    }
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    for (x, y, v) in pixels {
        let wgt = ((bg - v) / (bg - fg)).clamp(0.0, 1.0);
        sw += wgt;
        sx += wgt * x;
        sy += wgt * y;
    }
    (sw > 0.0).then(|| (sx / sw, sy / sw))
}

/// Measures a wheel crop. `bolt_centers` (crop coordinates) come from an
/// external bolt detector when available; otherwise the Hough bolt finder runs.
pub fn measure_crop(
    gray: &Image,
    bolt_centers: Option<&[(f64, f64)]>,
    cfg: &SizeConfig,
) -> Result<CropMeasurement> {
    gray.require_gray("measure_crop")?;
    let (rim, contour, threshold) = rim_ellipse_from_crop(gray, cfg)?;
    let bolts = match bolt_centers {
        Some(c) => c.to_vec(),
        None => find_bolts(gray, cfg)?,
    };
    let pitch = pitch_ellipse_from_centers(&bolts, &cfg.pitch())?;
    let estimate = estimate_rim_diameter(&rim, &pitch, &cfg.pitch())?;
    Ok(CropMeasurement {
        estimate,
        contour,
        bolt_centers: bolts,
        threshold,
    })
}

/// Draws both ellipses, the ray samples and the bolt centers on the crop.
pub fn draw_overlay(gray: &Image, m: &CropMeasurement) -> Image {
    let mut img = gray.to_rgb();
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut put = |x: f64, y: f64, rgb: [u8; 3]| {
        let (xi, yi) = (x.round() as isize, y.round() as isize);
        if xi >= 0 && yi >= 0 && xi < w && yi < h {
            let i = ((yi * w + xi) * 3) as usize;
            img.data_mut()[i..i + 3].copy_from_slice(&rgb);
        }
    };
    for (el, rgb) in [
        (&m.estimate.rim, [255, 64, 64]),
        (&m.estimate.pitch, [64, 255, 64]),
    ] {
        let steps = (el.a * 8.0).ceil().max(64.0) as usize;
        for i in 0..steps {
            let (x, y) = el.point_at(i as f64 / steps as f64 * std::f64::consts::TAU);
            put(x, y, rgb);
        }
    }
    for &(x, y) in &m.contour {
        for d in -2..=2 {
            put(x + d as f64, y, [64, 160, 255]);
            put(x, y + d as f64, [64, 160, 255]);
        }
    }
    for &(x, y) in &m.bolt_centers {
        for d in -2..=2 {
            put(x + d as f64, y + d as f64, [255, 220, 0]);
            put(x + d as f64, y - d as f64, [255, 220, 0]);
        }
    }
    img
}
