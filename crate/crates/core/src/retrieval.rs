//! Top-k memory retrieval by cosine similarity of image embeddings.
//!
//! When the target's category already exists in memory the candidate pool is
//! restricted to that category; otherwise every record competes. An optional
//! perceptual distance can re-rank the shortlist down to a single record.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{read_tensor, RasterImage, TensorError};
use crate::memory::{AffordanceMemory, AffordanceRecord, EmbeddingVector, MemoryError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("embedding dimensions differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm embedding")]
    ZeroNormVector,
    #[error("affordance memory is empty")]
    EmptyMemory,
    #[error("top-k must be at least 1")]
    InvalidK,
    #[error("nothing to re-rank")]
    EmptyResults,
    #[error("no record with id {0:?}")]
    UnknownRecord(String),
    #[error("image is empty")]
    EmptyImage,
    #[error("no precomputed embedding at {0}")]
    MissingEmbeddingFile(String),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Maps an image to a fixed-length vector. Must be deterministic.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;
    fn embed(&self, img: &RasterImage) -> Result<EmbeddingVector, RetrievalError>;
}

/// Image dissimilarity with `d(a, a) == 0` and `d(a, b) == d(b, a)`.
pub trait PerceptualDistance: Send + Sync {
    fn name(&self) -> &str;
    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64, RetrievalError>;
}

/// Cosine similarity with f64 accumulation, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    cosine_slices(a.values(), b.values())
}

pub(crate) fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch(a.len(), b.len()));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroNormVector);
    }
    // sqrt of the product keeps self-similarity at exactly 1
    Ok((dot / (na * nb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub record_id: String,
    pub category: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

/// Whether retrieval was gated to the target's own category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    SameCategory,
    AllCategories,
}

pub fn candidate_pool<'a>(
    mem: &'a AffordanceMemory,
    target_category: &str,
) -> (Pool, Vec<&'a AffordanceRecord>) {
    if mem.has_category(target_category) {
        (Pool::SameCategory, mem.filter(Some(target_category)))
    } else {
        (Pool::AllCategories, mem.filter(None))
    }
}

/// Embeds the target and returns the `k` most similar gated candidates.
/// Records lacking an embedding for `enc` are embedded on the fly (not
/// persisted; see [`ensure_embeddings`]).
pub fn retrieve(
    mem: &AffordanceMemory,
    target_crop: &RasterImage,
    target_category: &str,
    k: usize,
    enc: &dyn Embedder,
) -> Result<Vec<RetrievalResult>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if mem.is_empty() {
        return Err(RetrievalError::EmptyMemory);
    }
    let target = enc.embed(target_crop)?;
    retrieve_by_embedding(mem, &target, target_category, k, enc)
}

pub fn retrieve_by_embedding(
    mem: &AffordanceMemory,
    target: &EmbeddingVector,
    target_category: &str,
    k: usize,
    enc: &dyn Embedder,
) -> Result<Vec<RetrievalResult>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::InvalidK);
    }
    if mem.is_empty() {
        return Err(RetrievalError::EmptyMemory);
    }
    let (_, pool) = candidate_pool(mem, target_category);
    let mut scored = pool
        .par_iter()
        .map(|rec| {
            let sim = match rec.embedding(enc.name()) {
                Some(e) => cosine_similarity(target, e)?,
                None => cosine_similarity(target, &enc.embed(&rec.crop)?)?,
            };
            Ok((rec.id.clone(), rec.category.clone(), sim))
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    scored.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    Ok(scored
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (record_id, category, similarity))| RetrievalResult {
            record_id,
            category,
            similarity,
            rank: i + 1,
        })
        .collect())
}

/// Computes and persists embeddings for every record that lacks one under
/// `enc`. Returns how many were added.
pub fn ensure_embeddings(
    mem: &mut AffordanceMemory,
    enc: &dyn Embedder,
) -> Result<usize, RetrievalError> {
    let missing: Vec<(String, RasterImage)> = mem
        .records()
        .iter()
        .filter(|r| r.embedding(enc.name()).is_none())
        .map(|r| (r.id.clone(), r.crop.clone()))
        .collect();
    let embedded = missing
        .par_iter()
        .map(|(id, crop)| Ok((id.clone(), enc.embed(crop)?)))
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    let n = embedded.len();
    for (id, e) in embedded {
        mem.put_embedding(&id, e)?;
    }
    Ok(n)
}

/// The shortlist entry whose crop is perceptually closest to the target;
/// ties keep the better cosine rank.
pub fn rerank_perceptual(
    mem: &AffordanceMemory,
    results: &[RetrievalResult],
    target_crop: &RasterImage,
    pd: &dyn PerceptualDistance,
) -> Result<RetrievalResult, RetrievalError> {
    let mut best: Option<(f64, &RetrievalResult)> = None;
    for r in results {
        let rec = mem
            .get(&r.record_id)
            .ok_or_else(|| RetrievalError::UnknownRecord(r.record_id.clone()))?;
        let d = pd.distance(target_crop, &rec.crop)?;
        let better = match best {
            None => true,
            Some((bd, br)) => d < bd || (d == bd && r.rank < br.rank),
        };
        if better {
            best = Some((d, r));
        }
    }
    best.map(|(_, r)| r.clone())
        .ok_or(RetrievalError::EmptyResults)
}

/// Built-in baseline embedder `patchgram-v1`.
///
/// At two scales (full and 2×2-box-downsampled) the luma plane is split into
/// a 4×4 grid; each cell contributes an 8-bin intensity histogram and an
/// 8-bin gradient-orientation histogram weighted by gradient magnitude.
/// 2 × 16 × 16 = 512 values, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct PatchGramEmbedder;

pub const PATCHGRAM_NAME: &str = "patchgram-v1";
const GRID: usize = 4;
const BINS: usize = 8;

impl PatchGramEmbedder {
    fn scale_features(plane: &[f64], w: usize, h: usize, out: &mut Vec<f32>) {
        let mut hist = vec![0.0f64; GRID * GRID * 2 * BINS];
        let mut counts = [0usize; GRID * GRID];
        let at = |x: isize, y: isize| -> f64 {
            let x = x.clamp(0, w as isize - 1) as usize;
            let y = y.clamp(0, h as isize - 1) as usize;
            plane[y * w + x]
        };
        for y in 0..h {
            for x in 0..w {
                let cell = (y * GRID / h) * GRID + x * GRID / w;
                counts[cell] += 1;
                let v = plane[y * w + x];
                let ib = ((v / 256.0 * BINS as f64) as usize).min(BINS - 1);
                hist[cell * 2 * BINS + ib] += 1.0;
                let gx = at(x as isize + 1, y as isize) - at(x as isize - 1, y as isize);
                let gy = at(x as isize, y as isize + 1) - at(x as isize, y as isize - 1);
                let mag = gx.hypot(gy);
                if mag > 0.0 {
                    let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                    let ob = ((theta / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
                    hist[cell * 2 * BINS + BINS + ob] += mag / 510.0;
                }
            }
        }
        for (cell, &n) in counts.iter().enumerate() {
            let n = n.max(1) as f64;
            for b in 0..2 * BINS {
                out.push((hist[cell * 2 * BINS + b] / n) as f32);
            }
        }
    }
}

fn downsample2(plane: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
    let (w2, h2) = ((w / 2).max(1), (h / 2).max(1));
    let mut out = Vec::with_capacity(w2 * h2);
    for y in 0..h2 {
        for x in 0..w2 {
            let mut s = 0.0;
            let mut n = 0.0;
            for dy in 0..2 {
                for dx in 0..2 {
                    let (xx, yy) = (2 * x + dx, 2 * y + dy);
                    if xx < w && yy < h {
                        s += plane[yy * w + xx];
                        n += 1.0;
                    }
                }
            }
            out.push(s / n);
        }
    }
    (out, w2, h2)
}

impl Embedder for PatchGramEmbedder {
    fn name(&self) -> &str {
        PATCHGRAM_NAME
    }

    fn embed(&self, img: &RasterImage) -> Result<EmbeddingVector, RetrievalError> {
        if img.is_empty() {
            return Err(RetrievalError::EmptyImage);
        }
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = img.gray_plane();
        let mut v = Vec::with_capacity(512);
        Self::scale_features(&plane, w, h, &mut v);
        let (p2, w2, h2) = downsample2(&plane, w, h);
        Self::scale_features(&p2, w2, h2, &mut v);
        let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x = (*x as f64 / norm) as f32);
        }
        Ok(EmbeddingVector::new(PATCHGRAM_NAME, v)?)
    }
}

/// Looks up exporter-produced embeddings stored as
/// `<dir>/<image-digest>.<encoder>.rft`.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    pub dir: PathBuf,
    pub encoder: String,
}

impl FileEmbedder {
    pub fn new(dir: impl Into<PathBuf>, encoder: impl Into<String>) -> Self {
        Self {
            dir: dir.into(),
            encoder: encoder.into(),
        }
    }

    pub fn path_for(&self, img: &RasterImage) -> PathBuf {
        self.dir
            .join(format!("{}.{}.rft", img.digest(), self.encoder))
    }
}

impl Embedder for FileEmbedder {
    fn name(&self) -> &str {
        &self.encoder
    }

    fn embed(&self, img: &RasterImage) -> Result<EmbeddingVector, RetrievalError> {
        let p = self.path_for(img);
        if !p.is_file() {
            return Err(RetrievalError::MissingEmbeddingFile(p.display().to_string()));
        }
        Ok(EmbeddingVector::from_tensor(&self.encoder, read_tensor(&p)?)?)
    }
}

/// Built-in baseline perceptual distance `dssim64`: mean per-pixel CIE76
/// ΔE between both images after bilinear resizing to 64×64.
#[derive(Debug, Clone, Copy, Default)]
pub struct Dssim64;

pub const DSSIM64_NAME: &str = "dssim64";
const SIDE: usize = 64;

fn srgb_to_linear(c: f64) -> f64 {
    let c = c / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB (D65) to CIELAB.
pub fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let (r, g, b) = (
        srgb_to_linear(rgb[0]),
        srgb_to_linear(rgb[1]),
        srgb_to_linear(rgb[2]),
    );
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Bilinear resize to `side × side` RGB samples (pixel-centre aligned).
fn resize_rgb(img: &RasterImage, side: usize) -> Vec<[f64; 3]> {
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut out = Vec::with_capacity(side * side);
    let coord = |i: usize, src: f64| -> (u32, u32, f64) {
        let s = ((i as f64 + 0.5) * src / side as f64 - 0.5).clamp(0.0, src - 1.0);
        let i0 = s.floor();
        let i1 = (i0 + 1.0).min(src - 1.0);
        (i0 as u32, i1 as u32, s - i0)
    };
    for y in 0..side {
        let (y0, y1, fy) = coord(y, h);
        for x in 0..side {
            let (x0, x1, fx) = coord(x, w);
            let (a, b, c, d) = (img.rgb(x0, y0), img.rgb(x1, y0), img.rgb(x0, y1), img.rgb(x1, y1));
            let mut px = [0.0; 3];
            for ch in 0..3 {
                let top = a[ch] as f64 * (1.0 - fx) + b[ch] as f64 * fx;
                let bot = c[ch] as f64 * (1.0 - fx) + d[ch] as f64 * fx;
                px[ch] = top * (1.0 - fy) + bot * fy;
            }
            out.push(px);
        }
    }
    out
}

impl PerceptualDistance for Dssim64 {
    fn name(&self) -> &str {
        DSSIM64_NAME
    }

    fn distance(&self, a: &RasterImage, b: &RasterImage) -> Result<f64, RetrievalError> {
        if a.is_empty() || b.is_empty() {
            return Err(RetrievalError::EmptyImage);
        }
        let la: Vec<[f64; 3]> = resize_rgb(a, SIDE).into_iter().map(rgb_to_lab).collect();
        let lb: Vec<[f64; 3]> = resize_rgb(b, SIDE).into_iter().map(rgb_to_lab).collect();
        let total: f64 = la
            .iter()
            .zip(&lb)
            .map(|(p, q)| {
                ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
            })
            .sum();
        Ok(total / (SIDE * SIDE) as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f32]) -> EmbeddingVector {
        EmbeddingVector::new("t", x.to_vec()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[0.3, 0.4]), &v(&[0.3, 0.4])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let s = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((s - 0.7071067).abs() < 1e-6);
    }

    #[test]
    fn cosine_errors() {
        assert!(matches!(
            cosine_similarity(&v(&[1.0]), &v(&[1.0, 0.0])),
            Err(RetrievalError::DimensionMismatch(1, 2))
        ));
        assert!(matches!(
            cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])),
            Err(RetrievalError::ZeroNormVector)
        ));
    }

    #[test]
    fn patchgram_shape_and_determinism() {
        let img = RasterImage::rgb_from_fn(23, 17, |x, y| [(x * 11) as u8, (y * 13) as u8, 7]);
        let a = PatchGramEmbedder.embed(&img).unwrap();
        let b = PatchGramEmbedder.embed(&img).unwrap();
        assert_eq!(a.len(), 512);
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        let tiny = RasterImage::gray_from_fn(1, 1, |_, _| 3);
        assert_eq!(PatchGramEmbedder.embed(&tiny).unwrap().len(), 512);
    }

    #[test]
    fn dssim_axioms() {
        let a = RasterImage::rgb_from_fn(30, 20, |x, y| [(x * 8) as u8, (y * 12) as u8, 90]);
        let b = RasterImage::rgb_from_fn(25, 25, |x, _| [200, (x * 9) as u8, 10]);
        assert_eq!(Dssim64.distance(&a, &a).unwrap(), 0.0);
        assert_eq!(
            Dssim64.distance(&a, &b).unwrap(),
            Dssim64.distance(&b, &a).unwrap()
        );
        assert!(Dssim64.distance(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn lab_reference_points() {
        let white = rgb_to_lab([255.0, 255.0, 255.0]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-3 && white[2].abs() < 1e-3);
        let black = rgb_to_lab([0.0, 0.0, 0.0]);
        assert!(black[0].abs() < 1e-9);
    }
}
