//! HOG descriptors and a one-vs-rest linear SVM for rim classification.

use std::f64::consts::PI;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RimClass;
use crate::image::Image;
use crate::imgproc::sobel_gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HogConfig {
    pub orientations: usize,
    /// Pixels per cell side.
    pub cell: usize,
    /// Cells per block side.
    pub block: usize,
    /// Block step, in cells.
    pub block_stride: usize,
    /// Bins span `[0, 2 pi)` when set, `[0, pi)` otherwise.
    pub signed: bool,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self {
            orientations: 13,
            cell: 24,
            block: 3,
            block_stride: 1,
            signed: false,
        }
    }
}

impl HogConfig {
    pub fn new(orientations: usize, cell: usize) -> Self {
        Self {
            orientations,
            cell,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.orientations < 2 || self.cell < 2 || self.block < 1 || self.block_stride < 1 {
            return Err(Error::invalid(format!(
                "invalid HOG config {self:?}: need orientations >= 2, cell >= 2, block >= 1, stride >= 1"
            )));
        }
        Ok(())
    }

    fn blocks_per_side(&self, side: usize) -> Result<usize> {
        self.validate()?;
        let n_cells = side / self.cell;
        if n_cells < self.block {
            return Err(Error::invalid(format!(
                "image side {side} too small for one {0}x{0} block of {1} px cells",
                self.block, self.cell
            )));
        }
        Ok((n_cells - self.block) / self.block_stride + 1)
    }
}

/// Length of the HOG descriptor of a `side x side` image.
pub fn hog_dims(cfg: &HogConfig, side: usize) -> Result<usize> {
    let nb = cfg.blocks_per_side(side)?;
    Ok(nb * nb * cfg.block * cfg.block * cfg.orientations)
}

const BLOCK_EPS: f64 = 1e-6;

/// HOG descriptor of a square gray image.
///
/// Per-cell histograms accumulate gradient magnitude split linearly between
/// the two nearest orientation bins (bin `k` centered at `k * pi / n`).
/// Blocks are L2-normalized and concatenated in row-major block order.
pub fn hog_features(gray: &Image, cfg: &HogConfig) -> Result<Vec<f64>> {
    gray.require_gray("hog_features")?;
    if gray.width() != gray.height() {
        return Err(Error::invalid(format!(
            "hog_features needs a square image, got {}x{}",
            gray.width(),
            gray.height()
        )));
    }
    let side = gray.width();
    let nb = cfg.blocks_per_side(side)?;
    let n_cells = side / cfg.cell;
    let bins = cfg.orientations;
    let span = if cfg.signed { 2.0 * PI } else { PI };
    let bin_width = span / bins as f64;

    let grad = sobel_gradients(gray)?;
    let mut cells = vec![0f64; n_cells * n_cells * bins];
    for y in 0..n_cells * cfg.cell {
        let cy = y / cfg.cell;
        for x in 0..n_cells * cfg.cell {
            let (gx, gy) = grad.at(x, y);
            if gx == 0 && gy == 0 {
                continue;
            }
            let (gx, gy) = (gx as f64, gy as f64);
            let mag = gx.hypot(gy);
            let mut angle = gy.atan2(gx);
            if angle < 0.0 {
                angle += 2.0 * PI;
            }
            if !cfg.signed && angle >= PI {
                angle -= PI;
            }
            let pos = angle / bin_width;
            let lo = pos.floor();
            let frac = pos - lo;
            let lo = lo as usize % bins;
            let hi = (lo + 1) % bins;
            let base = (cy * n_cells + x / cfg.cell) * bins;
            cells[base + lo] += mag * (1.0 - frac);
            cells[base + hi] += mag * frac;
        }
    }

    let block_len = cfg.block * cfg.block * bins;
    let mut out = Vec::with_capacity(nb * nb * block_len);
    let mut block = Vec::with_capacity(block_len);
    for by in 0..nb {
        for bx in 0..nb {
            block.clear();
            for cy in by * cfg.block_stride..by * cfg.block_stride + cfg.block {
                for cx in bx * cfg.block_stride..bx * cfg.block_stride + cfg.block {
                    let base = (cy * n_cells + cx) * bins;
                    block.extend_from_slice(&cells[base..base + bins]);
                }
            }
            let norm = (block.iter().map(|v| v * v).sum::<f64>() + BLOCK_EPS * BLOCK_EPS).sqrt();
            out.extend(block.iter().map(|v| v / norm));
        }
    }
    Ok(out)
}

/// What the SVM weight vectors are indexed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureSpace {
    /// Arbitrary feature vectors of a fixed length.
    Raw { dims: usize },
    /// HOG descriptors of `side x side` crops.
    Hog { hog: HogConfig, side: usize },
}

impl FeatureSpace {
    pub fn dims(&self) -> Result<usize> {
        match self {
            FeatureSpace::Raw { dims } => Ok(*dims),
            FeatureSpace::Hog { hog, side } => hog_dims(hog, *side),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmParams {
    /// Soft-margin constant; the L2 weight is `1 / (c * n)`.
    pub c: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 10.0,
            epochs: 30,
            seed: 0,
        }
    }
}

/// One-vs-rest linear SVM.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub classes: Vec<RimClass>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
    pub space: FeatureSpace,
}

/// Trains one binary hinge-loss machine per class with Pegasos-style
/// sub-gradient steps. Every machine sees the same seeded sample order, so a
/// machine depends only on which samples belong to its class.
pub fn svm_train(
    features: &[Vec<f64>],
    labels: &[RimClass],
    params: &SvmParams,
    space: FeatureSpace,
) -> Result<SvmModel> {
    if features.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if !(params.c > 0.0) || params.epochs == 0 {
        return Err(Error::invalid("svm needs c > 0 and epochs >= 1"));
    }
    let dims = space.dims()?;
    for (i, row) in features.iter().enumerate() {
        if row.len() != dims {
            return Err(Error::invalid(format!(
                "feature row {i} has length {}, expected {dims}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("feature row {i} contains NaN or inf")));
        }
    }
    let mut classes: Vec<RimClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::invalid("svm training needs at least 2 classes"));
    }
    for c in &classes {
        let count = labels.iter().filter(|l| *l == c).count();
        if count < 2 {
            return Err(Error::invalid(format!(
                "class {c} has {count} sample(s), need at least 2"
            )));
        }
    }

    let n = features.len();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let schedule: Vec<Vec<usize>> = (0..params.epochs)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            idx
        })
        .collect();
    let sq_norms: Vec<f64> = features
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let lambda = 1.0 / (params.c * n as f64);

    let mut weights = Vec::with_capacity(classes.len());
    let mut biases = Vec::with_capacity(classes.len());
    for class in &classes {
        let targets: Vec<f64> = labels
            .iter()
            .map(|l| if l == class { 1.0 } else { -1.0 })
            .collect();
        let (w, b) = pegasos(features, &targets, &sq_norms, &schedule, lambda, dims);
        weights.push(w);
        biases.push(b);
    }
    Ok(SvmModel {
        classes,
        weights,
        biases,
        space,
    })
}

/// Binary machine on features augmented with a constant 1 (the bias).
/// Returns the average of the iterates over the final epoch.
fn pegasos(
    features: &[Vec<f64>],
    targets: &[f64],
    sq_norms: &[f64],
    schedule: &[Vec<usize>],
    lambda: f64,
    dims: usize,
) -> (Vec<f64>, f64) {
    // w = scale * (v, vb)
    let mut v = vec![0f64; dims];
    let mut vb = 0f64;
    let mut scale = 1f64;
    let mut v_sq = 0f64;
    let radius = 1.0 / lambda.sqrt();
    let mut avg = vec![0f64; dims];
    let mut avg_b = 0f64;
    let last = schedule.len() - 1;
    let mut t = 0usize;
    for (epoch, order) in schedule.iter().enumerate() {
        for &i in order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = &features[i];
            let y = targets[i];
            let dot = x.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() + vb;
            let margin = y * scale * dot;

            scale *= 1.0 - 1.0 / t as f64;
            if scale == 0.0 {
                v.iter_mut().for_each(|e| *e = 0.0);
                vb = 0.0;
                v_sq = 0.0;
                scale = 1.0;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                let dot_now = if v_sq == 0.0 { 0.0 } else { dot };
                v_sq += 2.0 * step * dot_now + step * step * sq_norms[i];
                v.iter_mut().zip(x).for_each(|(e, xi)| *e += step * xi);
                vb += step;
            }
            let norm = scale * v_sq.max(0.0).sqrt();
            if norm > radius {
                scale *= radius / norm;
            }
            if scale < 1e-9 {
                v.iter_mut().for_each(|e| *e *= scale);
                vb *= scale;
                v_sq *= scale * scale;
                scale = 1.0;
            }
            if epoch == last {
                avg.iter_mut().zip(&v).for_each(|(a, e)| *a += scale * e);
                avg_b += scale * vb;
            }
        }
    }
    let m = schedule[last].len() as f64;
    avg.iter_mut().for_each(|a| *a /= m);
    (avg, avg_b / m)
}

/// Predicted class and per-class margins, aligned with `model.classes`.
pub fn svm_predict(model: &SvmModel, feat: &[f64]) -> Result<(RimClass, Vec<f64>)> {
    let dims = model.weights.first().map_or(0, Vec::len);
    if feat.len() != dims {
        return Err(Error::invalid(format!(
            "feature length {} does not match model length {dims}",
            feat.len()
        )));
    }
    let margins: Vec<f64> = model
        .weights
        .iter()
        .zip(&model.biases)
        .map(|(w, b)| w.iter().zip(feat).map(|(a, x)| a * x).sum::<f64>() + b)
        .collect();
    // classes are sorted ascending, so strict '>' keeps the smaller id on ties
    let mut best = 0;
    for (i, m) in margins.iter().enumerate() {
        if *m > margins[best] {
            best = i;
        }
    }
    Ok((model.classes[best], margins))
}

const MAGIC: &[u8; 4] = b"RSVM";
const VERSION: u32 = 1;

impl SvmModel {
    /// Serializes to the portable little-endian model layout
    /// (see `docs/svm-model-format.md`).
    pub fn to_bytes(&self) -> Vec<u8> {
        let dims = self.weights.first().map_or(0, Vec::len);
        let mut out = Vec::with_capacity(48 + self.classes.len() * (4 + 8 * (dims + 1)));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let (kind, hog, side) = match self.space {
            FeatureSpace::Raw { .. } => (0u32, None, 0u32),
            FeatureSpace::Hog { hog, side } => (1u32, Some(hog), side as u32),
        };
        out.extend_from_slice(&kind.to_le_bytes());
        let h = hog.unwrap_or(HogConfig {
            orientations: 0,
            cell: 0,
            block: 0,
            block_stride: 0,
            signed: false,
        });
        for v in [
            h.orientations as u32,
            h.cell as u32,
            h.block as u32,
            h.block_stride as u32,
            h.signed as u32,
            side,
            self.classes.len() as u32,
        ] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(dims as u64).to_le_bytes());
        for c in &self.classes {
            out.extend_from_slice(&(c.id() as u32).to_le_bytes());
        }
        for row in &self.weights {
            for w in row {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        for b in &self.biases {
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::invalid("not an SVM model file (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::invalid(format!(
                "unsupported SVM model version {version}"
            )));
        }
        let kind = r.u32()?;
        let hog = HogConfig {
            orientations: r.u32()? as usize,
            cell: r.u32()? as usize,
            block: r.u32()? as usize,
            block_stride: r.u32()? as usize,
            signed: r.u32()? != 0,
        };
        let side = r.u32()? as usize;
        let n_classes = r.u32()? as usize;
        let dims = r.u64()? as usize;
        let space = match kind {
            0 => FeatureSpace::Raw { dims },
            1 => FeatureSpace::Hog { hog, side },
            k => return Err(Error::invalid(format!("unknown feature space kind {k}"))),
        };
        if space.dims()? != dims {
            return Err(Error::invalid(
                "model dimension does not match its HOG configuration",
            ));
        }
        let expected = n_classes
            .checked_mul(dims + 1)
            .and_then(|v| v.checked_mul(8))
            .and_then(|v| v.checked_add(4 * n_classes))
            .ok_or_else(|| Error::invalid("model header sizes overflow"))?;
        if bytes.len() - r.pos != expected {
            return Err(Error::invalid(format!(
                "model body is {} bytes, expected {expected}",
                bytes.len() - r.pos
            )));
        }
        let classes = (0..n_classes)
            .map(|_| {
                let id = r.u32()?;
                RimClass::new(u8::try_from(id).map_err(|_| Error::invalid("class id too large"))?)
            })
            .collect::<Result<Vec<_>>>()?;
        let weights = (0..n_classes)
            .map(|_| (0..dims).map(|_| r.f64()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let biases = (0..n_classes).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(SvmModel {
            classes,
            weights,
            biases,
            space,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Extracts features from a gray crop and predicts; HOG models only.
    pub fn classify_crop(&self, gray: &Image) -> Result<(RimClass, Vec<f64>)> {
        match self.space {
            FeatureSpace::Hog { hog, side } => {
                if gray.width() != side || gray.height() != side {
                    return Err(Error::invalid(format!(
                        "model expects {side}x{side} crops, got {}x{}",
                        gray.width(),
                        gray.height()
                    )));
                }
                svm_predict(self, &hog_features(gray, &hog)?)
            }
            FeatureSpace::Raw { .. } => Err(Error::invalid(
                "model was not trained on HOG features",
            )),
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::invalid("truncated SVM model file"));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Table-style accuracy row for one HOG configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HogReportRow {
    pub orientations: usize,
    pub pixels_per_cell: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub features: usize,
}
