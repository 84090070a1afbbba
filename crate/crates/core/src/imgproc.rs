//! Preprocessing shared by the Hough detector, HOG and contour extraction.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geom::BBox;
use crate::image::Image;

/// Luma conversion `round(0.299 R + 0.587 G + 0.114 B)`; identity on gray input.
pub fn to_grayscale(img: &Image) -> Image {
    if img.is_gray() {
        return img.clone();
    }
    let data = img
        .data()
        .chunks_exact(3)
        .map(|p| {
            let l = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
            l.round().min(255.0) as u8
        })
        .collect();
    Image::from_raw(img.width(), img.height(), 1, data).expect("same dimensions")
}

/// Box-filter downscale by an integer factor; output dims are `floor(dim / factor)`.
pub fn downscale(img: &Image, factor: usize) -> Result<Image> {
    if factor < 1 {
        return Err(Error::invalid("downscale factor must be >= 1"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    let (ow, oh) = (img.width() / factor, img.height() / factor);
    if ow == 0 || oh == 0 {
        return Err(Error::invalid(format!(
            "downscale factor {factor} too large for {}x{} image",
            img.width(),
            img.height()
        )));
    }
    let ch = img.channels();
    let n = (factor * factor) as u32;
    let src = img.data();
    let mut out = vec![0u8; ow * oh * ch];
    for oy in 0..oh {
        for ox in 0..ow {
            for c in 0..ch {
                let mut sum = 0u32;
                for y in oy * factor..(oy + 1) * factor {
                    let row = y * img.width();
                    for x in ox * factor..(ox + 1) * factor {
                        sum += src[(row + x) * ch + c] as u32;
                    }
                }
                out[(oy * ow + ox) * ch + c] = ((sum + n / 2) / n) as u8;
            }
        }
    }
    Image::from_raw(ow, oh, ch, out)
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("blur sigma must be > 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Result<Image> {
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (w, h, ch) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;

    let mut tmp = vec![0f64; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + i as isize - r, w);
                    acc += kv * src[(y * w + sx) * ch + c] as f64;
                }
                tmp[(y * w + x) * ch + c] = acc;
            }
        }
    }
    let mut out = vec![0u8; w * h * ch];
    for y in 0..h {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + i as isize - r, h);
                    acc += kv * tmp[(sy * w + x) * ch + c];
                }
                out[(y * w + x) * ch + c] = acc.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Image::from_raw(w, h, ch, out)
}

/// Per-pixel Sobel derivatives.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    gx: Vec<i16>,
    gy: Vec<i16>,
}

impl GradientField {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn gx(&self) -> &[i16] {
        &self.gx
    }
    pub fn gy(&self) -> &[i16] {
        &self.gy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (i16, i16) {
        let i = y * self.width + x;
        (self.gx[i], self.gy[i])
    }

    #[inline]
    pub fn magnitude(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = self.at(x, y);
        (gx as f64).hypot(gy as f64)
    }

    /// Unsigned orientation in `[0, pi)`.
    #[inline]
    pub fn orientation(&self, x: usize, y: usize) -> f64 {
        let (gx, gy) = self.at(x, y);
        fold_orientation((gy as f64).atan2(gx as f64))
    }
}

/// Folds a full-circle angle onto `[0, pi)`.
#[inline]
pub fn fold_orientation(angle: f64) -> f64 {
    let t = if angle < 0.0 { angle + PI } else { angle };
    if t >= PI {
        t - PI
    } else {
        t
    }
}

/// 3x3 Sobel gradients with clamp-to-edge borders.
pub fn sobel_gradients(img: &Image) -> Result<GradientField> {
    img.require_gray("sobel_gradients")?;
    let (w, h) = (img.width(), img.height());
    let mut gx = vec![0i16; w * h];
    let mut gy = vec![0i16; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy) as i16;
            let sx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            gx[y * w + x] = sx;
            gy[y * w + x] = sy;
        }
    }
    Ok(GradientField {
        width: w,
        height: h,
        gx,
        gy,
    })
}

/// Result of Otsu binarization.
#[derive(Debug, Clone)]
pub struct OtsuResult {
    pub threshold: u8,
    /// 255 where the pixel is strictly above `threshold`, 0 elsewhere.
    pub binary: Image,
    /// Set when the input has a single intensity and no split exists.
    pub degenerate: bool,
}

pub fn histogram(img: &Image) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[v as usize] += 1;
    }
    hist
}

/// Threshold maximizing the between-class variance of a 256-bin histogram
/// (class 0 = values `<= t`). Ties go to the smallest threshold. Returns
/// `(threshold, degenerate)`; a single-valued histogram is degenerate and
/// yields that value.
///
/// Candidates are compared exactly in integer arithmetic:
/// `N^2 sigma_b^2(t) = (N s0 - n0 S)^2 / (n0 (N - n0))`.
pub fn otsu_from_histogram(hist: &[u64; 256]) -> (u8, bool) {
    let total: u64 = hist.iter().sum();
    let sum: u128 = hist
        .iter()
        .enumerate()
        .map(|(i, &c)| i as u128 * c as u128)
        .sum();
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    match occupied.as_slice() {
        [] => return (0, true),
        [only] => return (*only as u8, true),
        _ => {}
    }

    let n = total as u128;
    let mut n0: u128 = 0;
    let mut s0: u128 = 0;
    // best as a fraction num/den, starting at 0/1
    let mut best: (u128, u128) = (0, 1);
    let mut best_t = 0u8;
    for t in 0..256usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        if n0 == 0 || n0 == n {
            continue;
        }
        let lhs = n * s0;
        let rhs = n0 * sum;
        let diff = lhs.abs_diff(rhs);
        let den = n0 * (n - n0);
        // exact comparison of diff^2/den against best.0/best.1 when it fits
        let exact = diff.checked_mul(diff).and_then(|num| {
            Some((num, num.checked_mul(best.1)?, best.0.checked_mul(den)?))
        });
        let better = match exact {
            Some((num, l, r)) => {
                let gt = l > r;
                if gt {
                    best = (num, den);
                }
                gt
            }
            None => {
                let v = (diff as f64) * (diff as f64) / den as f64;
                let gt = v > best.0 as f64 / best.1 as f64;
                if gt {
                    best = (v as u128, 1);
                }
                gt
            }
        };
        if better {
            best_t = t as u8;
        }
    }
    (best_t, false)
}

/// Otsu binarization of a gray image.
pub fn otsu_threshold(img: &Image) -> Result<OtsuResult> {
    img.require_gray("otsu_threshold")?;
    let (threshold, degenerate) = otsu_from_histogram(&histogram(img));
    let data = if degenerate {
        vec![0u8; img.data().len()]
    } else {
        img.data()
            .iter()
            .map(|&v| if v > threshold { 255 } else { 0 })
            .collect()
    };
    Ok(OtsuResult {
        threshold,
        binary: Image::from_raw(img.width(), img.height(), 1, data)?,
        degenerate,
    })
}

/// Mapping between a source image and a square crop resampled to `out x out`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Source coordinate of the crop square's top-left corner (pixel edge).
    pub x0: f64,
    pub y0: f64,
    /// Source side length of the square.
    pub side: f64,
    pub out: usize,
}

impl CropTransform {
    /// Square of side `max(w, h)` centered on the box.
    pub fn for_box(bbox: &BBox, out: usize) -> Self {
        let side = bbox.w().max(bbox.h());
        let (cx, cy) = bbox.center();
        CropTransform {
            x0: cx - side / 2.0,
            y0: cy - side / 2.0,
            side,
            out,
        }
    }

    pub fn scale(&self) -> f64 {
        self.out as f64 / self.side
    }

    /// Source pixel coordinate to crop pixel coordinate.
    pub fn to_crop(&self, x: f64, y: f64) -> (f64, f64) {
        let s = self.scale();
        ((x + 0.5 - self.x0) * s - 0.5, (y + 0.5 - self.y0) * s - 0.5)
    }

    /// Crop pixel coordinate to source pixel coordinate.
    pub fn to_source(&self, u: f64, v: f64) -> (f64, f64) {
        let s = self.scale();
        (self.x0 + (u + 0.5) / s - 0.5, self.y0 + (v + 0.5) / s - 0.5)
    }
}

/// Bilinear sample with clamped neighbours; `None` outside the image footprint.
fn sample_bilinear(img: &Image, x: f64, y: f64, c: usize) -> Option<f64> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if x < -0.5 || y < -0.5 || x >= w - 0.5 || y >= h - 0.5 {
        return None;
    }
    let xf = x.floor();
    let yf = y.floor();
    let (fx, fy) = (x - xf, y - yf);
    let ch = img.channels();
    let data = img.data();
    let at = |xi: f64, yi: f64| {
        let xi = (xi as isize).clamp(0, img.width() as isize - 1) as usize;
        let yi = (yi as isize).clamp(0, img.height() as isize - 1) as usize;
        data[(yi * img.width() + xi) * ch + c] as f64
    };
    let top = at(xf, yf) * (1.0 - fx) + at(xf + 1.0, yf) * fx;
    let bot = at(xf, yf + 1.0) * (1.0 - fx) + at(xf + 1.0, yf + 1.0) * fx;
    Some(top * (1.0 - fy) + bot * fy)
}

/// Square crop of side `max(w, h)` centered on `bbox`, resampled bilinearly
/// to `out x out`. Area outside the source image is black.
pub fn crop_square(img: &Image, bbox: &BBox, out: usize) -> Result<Image> {
    Ok(crop_square_with_transform(img, bbox, out)?.0)
}

pub fn crop_square_with_transform(
    img: &Image,
    bbox: &BBox,
    out: usize,
) -> Result<(Image, CropTransform)> {
    if out == 0 {
        return Err(Error::invalid("crop output side must be > 0"));
    }
    let frame = BBox::new(0.0, 0.0, img.width() as f64, img.height() as f64)?;
    if bbox.intersection_area(&frame) <= 0.0 {
        return Err(Error::invalid(format!(
            "detection box {:?} lies entirely outside the {}x{} image",
            <[f64; 4]>::from(*bbox),
            img.width(),
            img.height()
        )));
    }
    let tf = CropTransform::for_box(bbox, out);
    let ch = img.channels();
    let mut data = vec![0u8; out * out * ch];
    for v in 0..out {
        for u in 0..out {
            let (sx, sy) = tf.to_source(u as f64, v as f64);
            for c in 0..ch {
                if let Some(val) = sample_bilinear(img, sx, sy, c) {
                    data[(v * out + u) * ch + c] = val.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok((Image::from_raw(out, out, ch, data)?, tf))
}
