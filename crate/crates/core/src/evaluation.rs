//! Point-prediction metrics against graded ground-truth masks.
//!
//! * **SR**: fraction of points whose mask value is strictly above the
//!   threshold (default 122).
//! * **NSS**: mean of `mask(p) / max(mask)`; 0 when the mask is all zero.
//! * **DTM**: mean distance from each point to the contour of the
//!   above-threshold region (0 for points inside it), divided by the image
//!   diagonal. Distances are between pixel centres and the contour uses
//!   4-connectivity; the image border counts as outside.
//!
//! Points are real-valued and looked up at their rounded pixel.
//!
//! Dataset aggregates are unweighted means over images. SR is reported as a
//! percentage at the aggregate level and as a fraction per image.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{disk_offsets, ImageSize, Point2};
use crate::io::{load_mask, read_json, GroundTruthMask, IoError, RasterError, RasterImage, Tensor};

pub const DEFAULT_THRESHOLD: u8 = 122;
pub const MAX_POINTS: usize = 5;

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("prediction has no points")]
    EmptyPrediction,
    #[error("prediction has {0} points (at most {MAX_POINTS} allowed)")]
    TooManyPoints(usize),
    #[error("point ({}, {}) lies outside the {}x{} mask", .0.x, .0.y, .1.width, .1.height)]
    PointOutOfBounds(Point2, ImageSize),
    #[error("mask has no pixel above threshold {0}")]
    EmptyMaskRegion(u8),
    #[error("no mask for image ids {0:?}")]
    MissingMask(Vec<String>),
    #[error("no prediction for image ids {0:?}")]
    MissingPrediction(Vec<String>),
    #[error("more than one prediction for image id {0}")]
    DuplicatePrediction(String),
    #[error("predictions mix several methods ({0}); pick one")]
    MixedMethods(String),
    #[error("nothing to evaluate")]
    NoImages,
    #[error("bad threshold range {0:?} (expected start:end:step within 0..=255)")]
    BadThresholdRange(String),
    #[error("heatmap must have shape [H,W] or [1,H,W], got {0:?}")]
    BadHeatmap(Vec<usize>),
    #[error("mask {path}: {source}")]
    Mask {
        path: String,
        #[source]
        source: RasterError,
    },
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Read access to a graded mask. Implemented for [`GroundTruthMask`]; tests
/// use it to drive the metrics with non-integer masks.
pub trait MaskValues {
    fn size(&self) -> ImageSize;
    fn value(&self, x: u32, y: u32) -> f64;
    fn max_value(&self) -> f64;
}

impl MaskValues for GroundTruthMask {
    fn size(&self) -> ImageSize {
        GroundTruthMask::size(self)
    }

    fn value(&self, x: u32, y: u32) -> f64 {
        self.get(x, y) as f64
    }

    fn max_value(&self) -> f64 {
        self.max() as f64
    }
}

fn pixels<M: MaskValues + ?Sized>(
    points: &[Point2],
    mask: &M,
) -> Result<Vec<(u32, u32)>, EvaluationError> {
    if points.is_empty() {
        return Err(EvaluationError::EmptyPrediction);
    }
    let size = mask.size();
    points
        .iter()
        .map(|p| p.pixel(size).ok_or(EvaluationError::PointOutOfBounds(*p, size)))
        .collect()
}

/// Fraction of points on mask values strictly greater than `threshold`.
pub fn metric_sr<M: MaskValues + ?Sized>(
    points: &[Point2],
    mask: &M,
    threshold: u8,
) -> Result<f64, EvaluationError> {
    let px = pixels(points, mask)?;
    let hits = px
        .iter()
        .filter(|&&(x, y)| mask.value(x, y) > threshold as f64)
        .count();
    Ok(hits as f64 / px.len() as f64)
}

pub fn metric_nss<M: MaskValues + ?Sized>(
    points: &[Point2],
    mask: &M,
) -> Result<f64, EvaluationError> {
    let px = pixels(points, mask)?;
    let max = mask.max_value();
    if max <= 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = px.iter().map(|&(x, y)| mask.value(x, y) / max).sum();
    Ok(sum / px.len() as f64)
}

pub fn metric_dtm<M: MaskValues + ?Sized>(
    points: &[Point2],
    mask: &M,
    threshold: u8,
) -> Result<f64, EvaluationError> {
    let px = pixels(points, mask)?;
    let size = mask.size();
    let inside = region(mask, threshold);
    if !inside.iter().any(|&b| b) {
        return Err(EvaluationError::EmptyMaskRegion(threshold));
    }
    let w = size.width as usize;
    let contour = contour_of(&inside, w, size.height as usize);
    let dist_sq = distance_transform_sq(&contour, w, size.height as usize);
    let total: f64 = px
        .iter()
        .map(|&(x, y)| {
            let i = y as usize * w + x as usize;
            if inside[i] {
                0.0
            } else {
                dist_sq[i].sqrt()
            }
        })
        .sum();
    Ok(total / px.len() as f64 / size.diagonal())
}

fn region<M: MaskValues + ?Sized>(mask: &M, threshold: u8) -> Vec<bool> {
    let size = mask.size();
    let mut out = Vec::with_capacity(size.width as usize * size.height as usize);
    for y in 0..size.height {
        for x in 0..size.width {
            out.push(mask.value(x, y) > threshold as f64);
        }
    }
    out
}

/// Region pixels with a 4-neighbour outside the region or off the image.
pub(crate) fn contour_of(inside: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; inside.len()];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !inside[i] {
                continue;
            }
            out[i] = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !inside[i - 1]
                || !inside[i + 1]
                || !inside[i - w]
                || !inside[i + w];
        }
    }
    out
}

/// Exact squared Euclidean distance to the nearest `true` cell
/// (separable lower-envelope transform).
fn distance_transform_sq(seeds: &[bool], w: usize, h: usize) -> Vec<f64> {
    const FAR: f64 = 1e20;
    let mut grid: Vec<f64> = seeds.iter().map(|&s| if s { 0.0 } else { FAR }).collect();
    let n = w.max(h);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        envelope_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        envelope_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        grid[y * w..(y + 1) * w].copy_from_slice(&d[..w]);
    }
    grid
}

fn envelope_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let cross = |p: usize| {
            ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64)
        };
        // z[0] is -inf, so this stops at k == 0
        let mut s = cross(v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *out = dq * dq + f[v[k]];
    }
}

/// One method's points for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image_id: String,
    pub method: String,
    pub points: Vec<Point2>,
}

impl Prediction {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if self.points.is_empty() {
            return Err(EvaluationError::EmptyPrediction);
        }
        if self.points.len() > MAX_POINTS {
            return Err(EvaluationError::TooManyPoints(self.points.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub mask: PathBuf,
    pub category: String,
    #[serde(default)]
    pub seen: bool,
}

/// `image_id → entry`, with relative paths resolved against the manifest's
/// directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DatasetManifest {
    pub entries: BTreeMap<String, ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EvaluationError> {
        let path = path.as_ref();
        let mut m: DatasetManifest = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for e in m.entries.values_mut() {
            e.image = base.join(&e.image);
            e.mask = base.join(&e.mask);
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub category: String,
    pub seen: bool,
    pub points: usize,
    pub sr: f64,
    pub nss: f64,
    pub dtm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub group: String,
    pub images: usize,
    pub sr_percent: f64,
    pub nss: f64,
    pub dtm: f64,
}

impl AggregateRow {
    fn over<'a>(group: &str, rows: impl Iterator<Item = &'a ImageMetrics>) -> Option<Self> {
        let (mut n, mut sr, mut nss, mut dtm) = (0usize, 0.0, 0.0, 0.0);
        for r in rows {
            n += 1;
            sr += r.sr;
            nss += r.nss;
            dtm += r.dtm;
        }
        (n > 0).then(|| AggregateRow {
            group: group.to_string(),
            images: n,
            sr_percent: 100.0 * sr / n as f64,
            nss: nss / n as f64,
            dtm: dtm / n as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub threshold: u8,
    pub images: Vec<ImageMetrics>,
    pub categories: Vec<AggregateRow>,
    pub seen: Option<AggregateRow>,
    pub unseen: Option<AggregateRow>,
    pub overall: AggregateRow,
    /// Predictions without a usable mask (only with `allow_partial`).
    pub missing_masks: Vec<String>,
    /// Manifest entries without a prediction (only with `allow_partial`).
    pub missing_predictions: Vec<String>,
}

impl EvalReport {
    /// Aggregate rows as CSV with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in self.rows() {
            w.serialize(r).expect("in-memory CSV write");
        }
        String::from_utf8(w.into_inner().expect("in-memory CSV flush")).expect("UTF-8 fields")
    }

    pub fn render_table(&self) -> String {
        let width = self.rows().map(|r| r.group.len()).max().unwrap_or(5).max(8);
        let mut out = format!(
            "method {}  threshold {}\n{:<width$}  {:>6}  {:>7}  {:>6}  {:>6}\n",
            self.method, self.threshold, "group", "images", "SR(%)", "NSS", "DTM"
        );
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>7.2}  {:>6.3}  {:>6.3}",
                r.group, r.images, r.sr_percent, r.nss, r.dtm
            );
        }
        out
    }

    /// Category rows, then seen/unseen, then overall.
    pub fn rows(&self) -> impl Iterator<Item = &AggregateRow> {
        self.categories
            .iter()
            .chain(self.seen.iter())
            .chain(self.unseen.iter())
            .chain(std::iter::once(&self.overall))
    }
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold: u8,
    pub allow_partial: bool,
    /// Only evaluate predictions of this method; `None` requires all
    /// predictions to share one method name.
    pub method: Option<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            allow_partial: false,
            method: None,
        }
    }
}

struct Paired<'a> {
    pred: &'a Prediction,
    entry: &'a ManifestEntry,
    mask: GroundTruthMask,
}

struct Pairing<'a> {
    method: String,
    pairs: Vec<Paired<'a>>,
    missing_masks: Vec<String>,
    missing_predictions: Vec<String>,
}

fn pair<'a>(
    preds: &'a [Prediction],
    manifest: &'a DatasetManifest,
    opts: &EvalOptions,
) -> Result<Pairing<'a>, EvaluationError> {
    let selected: Vec<&Prediction> = preds
        .iter()
        .filter(|p| opts.method.as_ref().is_none_or(|m| &p.method == m))
        .collect();
    let methods: BTreeSet<&str> = selected.iter().map(|p| p.method.as_str()).collect();
    let method = match methods.len() {
        0 => return Err(EvaluationError::NoImages),
        1 => methods.into_iter().next().unwrap().to_string(),
        _ => {
            return Err(EvaluationError::MixedMethods(
                methods.into_iter().collect::<Vec<_>>().join(", "),
            ))
        }
    };
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in &selected {
        p.validate()?;
        if by_id.insert(&p.image_id, p).is_some() {
            return Err(EvaluationError::DuplicatePrediction(p.image_id.clone()));
        }
    }
    let missing_predictions: Vec<String> = manifest
        .entries
        .keys()
        .filter(|id| !by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    // an absent entry or mask file counts as missing; an unreadable mask is an error
    let loaded = by_id
        .into_par_iter()
        .map(|(id, pred)| {
            let Some(entry) = manifest.entries.get(id).filter(|e| e.mask.is_file()) else {
                return Ok((id, None));
            };
            let mask = load_mask(&entry.mask).map_err(|source| EvaluationError::Mask {
                path: entry.mask.display().to_string(),
                source,
            })?;
            Ok((id, Some(Paired { pred, entry, mask })))
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    let mut pairs = Vec::with_capacity(loaded.len());
    let mut missing_masks = Vec::new();
    for (id, p) in loaded {
        match p {
            Some(p) => pairs.push(p),
            None => missing_masks.push(id.to_string()),
        }
    }
    if !opts.allow_partial {
        if !missing_masks.is_empty() {
            return Err(EvaluationError::MissingMask(missing_masks));
        }
        if !missing_predictions.is_empty() {
            return Err(EvaluationError::MissingPrediction(missing_predictions));
        }
    }
    if pairs.is_empty() {
        return Err(EvaluationError::NoImages);
    }
    Ok(Pairing {
        method,
        pairs,
        missing_masks,
        missing_predictions,
    })
}

/// Scores every prediction against its manifest mask. Images are processed
/// in parallel and reported sorted by image id.
pub fn evaluate_dataset(
    preds: &[Prediction],
    manifest: &DatasetManifest,
    opts: &EvalOptions,
) -> Result<EvalReport, EvaluationError> {
    let pairing = pair(preds, manifest, opts)?;
    let t = opts.threshold;
    let images = pairing
        .pairs
        .par_iter()
        .map(|p| {
            let pts = &p.pred.points;
            Ok(ImageMetrics {
                image_id: p.pred.image_id.clone(),
                category: p.entry.category.clone(),
                seen: p.entry.seen,
                points: pts.len(),
                sr: metric_sr(pts, &p.mask, t)?,
                nss: metric_nss(pts, &p.mask)?,
                dtm: metric_dtm(pts, &p.mask, t)?,
            })
        })
        .collect::<Result<Vec<_>, EvaluationError>>()?;
    let cats: BTreeSet<&str> = images.iter().map(|m| m.category.as_str()).collect();
    let categories = cats
        .iter()
        .filter_map(|c| AggregateRow::over(c, images.iter().filter(|m| m.category == *c)))
        .collect();
    Ok(EvalReport {
        method: pairing.method,
        threshold: t,
        seen: AggregateRow::over("seen", images.iter().filter(|m| m.seen)),
        unseen: AggregateRow::over("unseen", images.iter().filter(|m| !m.seen)),
        overall: AggregateRow::over("overall", images.iter()).expect("at least one image"),
        categories,
        images,
        missing_masks: pairing.missing_masks,
        missing_predictions: pairing.missing_predictions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: u8,
    pub sr_percent: f64,
}

/// Overall SR recomputed at each threshold.
pub fn sr_threshold_curve(
    preds: &[Prediction],
    manifest: &DatasetManifest,
    thresholds: &[u8],
    opts: &EvalOptions,
) -> Result<Vec<CurvePoint>, EvaluationError> {
    let pairing = pair(preds, manifest, opts)?;
    thresholds
        .iter()
        .map(|&t| {
            let total = pairing
                .pairs
                .iter()
                .map(|p| metric_sr(&p.pred.points, &p.mask, t))
                .sum::<Result<f64, _>>()?;
            Ok(CurvePoint {
                threshold: t,
                sr_percent: 100.0 * total / pairing.pairs.len() as f64,
            })
        })
        .collect()
}

/// Parses `start:end:step` into `start, start+step, … ≤ end`.
pub fn parse_threshold_range(s: &str) -> Result<Vec<u8>, EvaluationError> {
    let bad = || EvaluationError::BadThresholdRange(s.to_string());
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if step == 0 || start > end || end > 255 {
        return Err(bad());
    }
    Ok((start..=end).step_by(step as usize).map(|t| t as u8).collect())
}

pub const OVERLAY_ALPHA: f64 = 0.4;
pub const OVERLAY_TINT: [u8; 3] = [255, 0, 255];
pub const POINT_COLOR: [u8; 3] = [255, 0, 0];
pub const POINT_RADIUS: f64 = 5.0;

/// Tints mask pixels (`> 0`) and draws each point as a filled disc.
pub fn render_overlay(
    img: &RasterImage,
    points: &[Point2],
    mask: Option<&GroundTruthMask>,
) -> RasterImage {
    let mut out = img.to_rgb();
    if let Some(mask) = mask {
        let w = out.width().min(mask.width());
        let h = out.height().min(mask.height());
        for y in 0..h {
            for x in 0..w {
                if mask.get(x, y) == 0 {
                    continue;
                }
                let c = out.rgb(x, y);
                let mut blended = [0u8; 3];
                for k in 0..3 {
                    blended[k] = ((1.0 - OVERLAY_ALPHA) * c[k] as f64
                        + OVERLAY_ALPHA * OVERLAY_TINT[k] as f64)
                        .round() as u8;
                }
                out.put_rgb(x, y, blended);
            }
        }
    }
    let disc = disk_offsets(POINT_RADIUS);
    for p in points {
        let c = p.rounded();
        for &(dx, dy) in &disc {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            if x >= 0 && y >= 0 && (x as u32) < out.width() && (y as u32) < out.height() {
                out.put_rgb(x as u32, y as u32, POINT_COLOR);
            }
        }
    }
    out
}

/// The `k` highest cells of a `[H,W]` (or `[1,H,W]`) heatmap as points in
/// `image` coordinates. Ties keep row-major order.
pub fn heatmap_top_k(
    heatmap: &Tensor,
    k: usize,
    image: ImageSize,
) -> Result<Vec<Point2>, EvaluationError> {
    let (h, w) = match heatmap.shape() {
        [h, w] | [1, h, w] if *h > 0 && *w > 0 => (*h, *w),
        other => return Err(EvaluationError::BadHeatmap(other.to_vec())),
    };
    let mut idx: Vec<usize> = (0..h * w).collect();
    let data = heatmap.data();
    idx.sort_by(|&a, &b| data[b].total_cmp(&data[a]).then(a.cmp(&b)));
    Ok(idx
        .into_iter()
        .take(k)
        .map(|i| {
            let (gx, gy) = ((i % w) as f64, (i / w) as f64);
            Point2::new(
                (gx + 0.5) * image.width as f64 / w as f64 - 0.5,
                (gy + 0.5) * image.height as f64 / h as f64 - 0.5,
            )
        })
        .collect())
}
