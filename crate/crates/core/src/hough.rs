//! Gradient-directed circle Hough transform.
//!
//! Each edge pixel votes at distance `r` along both directions of its
//! gradient. Radii are processed one at a time into a single reused 2-D
//! accumulator plane, so peak memory is `O(W * H)` no matter how many radii
//! are searched.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{BBox, Circle, Detection, Label};
use crate::image::Image;
use crate::imgproc::sobel_gradients;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HoughConfig {
    pub r_min: f64,
    pub r_max: f64,
    /// Minimum Sobel gradient magnitude for an edge pixel.
    pub edge_threshold: f64,
    /// Minimum votes as a fraction of the circumference `2 pi r`.
    pub accumulator_threshold: f64,
    pub nms_center_dist: f64,
    pub nms_radius_dist: f64,
    pub max_results: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        Self {
            r_min: 10.0,
            r_max: 60.0,
            edge_threshold: 60.0,
            accumulator_threshold: 0.4,
            nms_center_dist: 10.0,
            nms_radius_dist: 4.0,
            max_results: 16,
        }
    }
}

impl HoughConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min > 0.0 && self.r_min < self.r_max) {
            return Err(Error::invalid(format!(
                "hough radius range must satisfy 0 < r_min < r_max, got {}..{}",
                self.r_min, self.r_max
            )));
        }
        if !(self.edge_threshold > 0.0)
            || !(self.accumulator_threshold > 0.0 && self.accumulator_threshold <= 1.0)
        {
            return Err(Error::invalid(
                "hough thresholds must be positive (accumulator_threshold in (0, 1])",
            ));
        }
        if self.nms_center_dist < 0.0 || self.nms_radius_dist < 0.0 {
            return Err(Error::invalid("hough NMS distances must be >= 0"));
        }
        Ok(())
    }

    /// Bolt search preset for a square wheel crop: radii 1-4 % of the side.
    pub fn bolt_preset(crop_side: usize) -> Self {
        let side = crop_side as f64;
        Self {
            r_min: (0.01 * side).max(2.0),
            r_max: (0.04 * side).max(3.0),
            edge_threshold: 60.0,
            accumulator_threshold: 0.5,
            nms_center_dist: 0.04 * side,
            nms_radius_dist: 0.04 * side,
            max_results: 12,
        }
    }
}

/// Region of allowed circle centers, in pixels, half-open `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Roi {
    /// The centered region covering `fraction` of each side of a square crop.
    pub fn inner(crop_side: usize, fraction: f64) -> Self {
        let margin = ((1.0 - fraction) / 2.0 * crop_side as f64).round() as usize;
        Roi {
            x0: margin,
            y0: margin,
            x1: crop_side - margin,
            y1: crop_side - margin,
        }
    }
}

/// Bookkeeping from one detector call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HoughStats {
    pub edge_pixels: usize,
    pub radii: usize,
    /// Cells in the (single) accumulator plane.
    pub accumulator_cells: usize,
    /// Peaks above threshold before non-maximum suppression.
    pub candidates: usize,
}

struct Edge {
    x: f64,
    y: f64,
    ux: f64,
    uy: f64,
}

struct Candidate {
    cx: f64,
    cy: f64,
    r: f64,
    ratio: f64,
}

/// Detects circles in a preprocessed gray image, best score first.
pub fn detect_circles(gray: &Image, cfg: &HoughConfig) -> Result<Vec<Circle>> {
    Ok(detect_circles_with_stats(gray, cfg, None)?.0)
}

pub fn detect_circles_with_stats(
    gray: &Image,
    cfg: &HoughConfig,
    roi: Option<Roi>,
) -> Result<(Vec<Circle>, HoughStats)> {
    gray.require_gray("detect_circles")?;
    cfg.validate()?;
    let (w, h) = (gray.width(), gray.height());
    let half_diag = 0.5 * (w as f64).hypot(h as f64);
    if cfg.r_max > half_diag {
        return Err(Error::invalid(format!(
            "r_max {} exceeds the image half-diagonal {half_diag:.1}",
            cfg.r_max
        )));
    }
    let roi = roi.unwrap_or(Roi {
        x0: 0,
        y0: 0,
        x1: w,
        y1: h,
    });

    let grad = sobel_gradients(gray)?;
    let thr2 = cfg.edge_threshold * cfg.edge_threshold;
    let mut edges = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let (gx, gy) = grad.at(x, y);
            let (gx, gy) = (gx as f64, gy as f64);
            let m2 = gx * gx + gy * gy;
            if m2 >= thr2 {
                let m = m2.sqrt();
                edges.push(Edge {
                    x: x as f64,
                    y: y as f64,
                    ux: gx / m,
                    uy: gy / m,
                });
            }
        }
    }

    let r_lo = cfg.r_min.ceil() as usize;
    let r_hi = cfg.r_max.floor() as usize;
    let mut stats = HoughStats {
        edge_pixels: edges.len(),
        radii: r_hi.saturating_sub(r_lo) + 1,
        accumulator_cells: w * h,
        candidates: 0,
    };

    let mut acc = vec![0u32; w * h];
    let mut touched: Vec<usize> = Vec::new();
    let mut candidates = Vec::new();
    let in_roi = |x: isize, y: isize| {
        x >= roi.x0 as isize && x < roi.x1 as isize && y >= roi.y0 as isize && y < roi.y1 as isize
    };

    for r in r_lo..=r_hi {
        let rf = r as f64;
        for e in &edges {
            for s in [1.0, -1.0] {
                let cx = (e.x + s * rf * e.ux).round() as isize;
                let cy = (e.y + s * rf * e.uy).round() as isize;
                if !in_roi(cx, cy) {
                    continue;
                }
                let idx = cy as usize * w + cx as usize;
                if acc[idx] == 0 {
                    touched.push(idx);
                }
                acc[idx] += 1;
            }
        }

        let min_votes = cfg.accumulator_threshold * 2.0 * PI * rf;
        let box_sum = |idx: usize| -> u32 {
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            let mut s = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        s += acc[ny as usize * w + nx as usize];
                    }
                }
            }
            s
        };
        for &idx in &touched {
            let votes = box_sum(idx);
            if (votes as f64) < min_votes {
                continue;
            }
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            // local maximum of the 3x3 box sums; plateaus resolved in raster order
            let mut is_peak = true;
            'nb: for dy in -1..=1isize {
                for dx in -1..=1isize {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let nv = box_sum(ny as usize * w + nx as usize);
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if nv > votes || (earlier && nv == votes) {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if !is_peak {
                continue;
            }
            let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        let v = acc[ny as usize * w + nx as usize] as f64;
                        sx += v * nx as f64;
                        sy += v * ny as f64;
                        sw += v;
                    }
                }
            }
            candidates.push(Candidate {
                cx: sx / sw,
                cy: sy / sw,
                r: rf,
                ratio: votes as f64 / (2.0 * PI * rf),
            });
        }
        for &idx in &touched {
            acc[idx] = 0;
        }
        touched.clear();
    }
    stats.candidates = candidates.len();

    candidates.sort_by(|a, b| {
        b.ratio
            .total_cmp(&a.ratio)
            .then(a.r.total_cmp(&b.r))
            .then(a.cy.total_cmp(&b.cy))
            .then(a.cx.total_cmp(&b.cx))
    });
    let mut kept: Vec<Circle> = Vec::new();
    for c in candidates {
        if kept.len() >= cfg.max_results {
            break;
        }
        let dup = kept.iter().any(|k| {
            (k.cx - c.cx).hypot(k.cy - c.cy) <= cfg.nms_center_dist
                && (k.r - c.r).abs() <= cfg.nms_radius_dist
        });
        if !dup {
            kept.push(Circle {
                cx: c.cx,
                cy: c.cy,
                r: c.r,
                score: c.ratio.min(1.0),
            });
        }
    }
    Ok((kept, stats))
}

/// Drops circles whose center lies within `center_dist` of a larger kept
/// circle, keeping the outermost of each concentric group.
pub fn suppress_concentric(circles: &[Circle], center_dist: f64) -> Vec<Circle> {
    let mut order: Vec<&Circle> = circles.iter().collect();
    order.sort_by(|a, b| b.r.total_cmp(&a.r).then(b.score.total_cmp(&a.score)));
    let mut kept: Vec<Circle> = Vec::new();
    for c in order {
        if !kept
            .iter()
            .any(|k| (k.cx - c.cx).hypot(k.cy - c.cy) <= center_dist)
        {
            kept.push(*c);
        }
    }
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cx.total_cmp(&b.cx)));
    kept
}

/// Drops every circle whose center lies inside a larger kept circle. Wheels
/// do not overlap, so anything centered inside a wheel belongs to it.
pub fn suppress_nested(circles: &[Circle]) -> Vec<Circle> {
    let mut order: Vec<&Circle> = circles.iter().collect();
    order.sort_by(|a, b| b.r.total_cmp(&a.r).then(b.score.total_cmp(&a.score)));
    let mut kept: Vec<Circle> = Vec::new();
    for c in order {
        if !kept.iter().any(|k| (k.cx - c.cx).hypot(k.cy - c.cy) < k.r) {
            kept.push(*c);
        }
    }
    kept.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.cx.total_cmp(&b.cx)));
    kept
}

/// Maps a circle found at `1/scale` resolution back to a full-resolution wheel box.
pub fn circle_to_detection(frame: usize, c: &Circle, scale: f64) -> Result<Detection> {
    if !(scale >= 1.0) {
        return Err(Error::invalid(format!("scale must be >= 1, got {scale}")));
    }
    let side = 2.0 * c.r * scale;
    let bbox = BBox::from_center(c.cx * scale, c.cy * scale, side, side)?;
    Detection::new(frame, Label::Wheel, bbox, c.score)
}
