//! Contact-point transfer by dense-feature nearest-neighbour matching.
//!
//! A source point's descriptor is compared by cosine similarity with every
//! cell of the target map and the best cell wins. Because features are
//! orientation sensitive, the source image may be searched under all eight
//! grid symmetries. Across the retrieved shortlist, the source whose points
//! match with the highest mean similarity supplies the final contact point.

mod dihedral;
mod features;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dihedral::Dihedral;
pub use features::{
    DenseFeatureMap, FeatureExtractor, FeatureSidecar, FileFeatureExtractor, ToyGridExtractor,
    TOYGRID_NAME,
};

use crate::extraction::ContactPointSet;
use crate::geometry::{centroid, resample_disk, Point2};
use crate::io::{IoError, RasterImage, TensorError};
use crate::memory::AffordanceRecord;

#[derive(Debug, Error)]
pub enum CorrespondenceError {
    #[error("point {0:?} outside the image")]
    OutOfBounds(Point2),
    #[error("feature channel counts differ ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("source descriptor has zero norm")]
    ZeroFeature,
    #[error("missing feature file {0}")]
    MissingFeatureFile(String),
    #[error("invalid feature map: {0}")]
    InvalidFeatureMap(String),
    #[error("no source candidates")]
    NoSources,
    #[error("every source failed to map; last error: {0}")]
    AllSourcesFailed(Box<CorrespondenceError>),
    #[error("image is empty")]
    EmptyImage,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub target_point: Point2,
    pub similarity: f64,
    pub transform: Dihedral,
    pub source_record_id: Option<String>,
}

/// Scores closer than this to the running best count as ties, so rounding
/// noise between collinear cells cannot reorder them.
pub const TIE_EPS: f64 = 1e-12;

/// Best target cell for one source point. Ties (within [`TIE_EPS`]) go to the
/// smallest row-major cell index; zero-norm target cells score 0.
pub fn match_point(
    src_fm: &DenseFeatureMap,
    p_s: Point2,
    tgt_fm: &DenseFeatureMap,
) -> Result<MatchResult, CorrespondenceError> {
    if src_fm.channels() != tgt_fm.channels() {
        return Err(CorrespondenceError::DimensionMismatch(
            src_fm.channels(),
            tgt_fm.channels(),
        ));
    }
    let q = src_fm.feature_at(p_s)?;
    let qsq = q.iter().map(|&v| v as f64 * v as f64).sum::<f64>();
    if qsq == 0.0 {
        return Err(CorrespondenceError::ZeroFeature);
    }
    let cells = tgt_fm.grid_h() * tgt_fm.grid_w();
    let mut dots = vec![0.0f64; cells];
    for (c, &qc) in q.iter().enumerate() {
        let qc = qc as f64;
        if qc == 0.0 {
            continue;
        }
        let plane = &tgt_fm.data()[c * cells..(c + 1) * cells];
        for (d, &v) in dots.iter_mut().zip(plane) {
            *d += qc * v as f64;
        }
    }
    let sq_norms = tgt_fm.cell_sq_norms();
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, (&d, &nsq)) in dots.iter().zip(sq_norms).enumerate() {
        let s = if nsq == 0.0 {
            0.0
        } else {
            (d / (qsq * nsq).sqrt()).clamp(-1.0, 1.0)
        };
        if s > best.1 + TIE_EPS {
            best = (i, s);
        }
    }
    let (gx, gy) = (best.0 % tgt_fm.grid_w(), best.0 / tgt_fm.grid_w());
    Ok(MatchResult {
        target_point: tgt_fm.cell_center(gx, gy),
        similarity: best.1,
        transform: Dihedral::R0,
        source_record_id: None,
    })
}

/// Matches every point of `points` under each of `transforms` applied to
/// the source image, keeping per point the highest similarity. Ties follow
/// the order of `transforms`. Each transformed feature map is built once.
pub fn match_points_with_transforms(
    src_img: &RasterImage,
    points: &[Point2],
    tgt_fm: &DenseFeatureMap,
    fx: &dyn FeatureExtractor,
    transforms: &[Dihedral],
) -> Result<Vec<MatchResult>, CorrespondenceError> {
    let per_transform = transforms
        .par_iter()
        .map(|&t| {
            let fm = fx.extract(src_img, t)?;
            points
                .iter()
                .map(|&p| {
                    let mut r = match_point(&fm, t.map_point(p, src_img.size()), tgt_fm)?;
                    r.transform = t;
                    Ok(r)
                })
                .collect::<Result<Vec<_>, CorrespondenceError>>()
        })
        .collect::<Result<Vec<_>, CorrespondenceError>>()?;
    let mut rows = per_transform.into_iter();
    let first = rows.next().ok_or(CorrespondenceError::NoSources)?;
    Ok(rows.fold(first, |best, row| {
        best.into_iter()
            .zip(row)
            .map(|(b, r)| if r.similarity > b.similarity { r } else { b })
            .collect()
    }))
}

/// Single-point form of [`match_points_with_transforms`].
pub fn match_with_transforms_in(
    src_img: &RasterImage,
    p_s: Point2,
    tgt_fm: &DenseFeatureMap,
    fx: &dyn FeatureExtractor,
    transforms: &[Dihedral],
) -> Result<MatchResult, CorrespondenceError> {
    let mut v = match_points_with_transforms(src_img, &[p_s], tgt_fm, fx, transforms)?;
    Ok(v.remove(0))
}

pub fn match_with_transforms(
    src_img: &RasterImage,
    p_s: Point2,
    tgt_fm: &DenseFeatureMap,
    fx: &dyn FeatureExtractor,
) -> Result<MatchResult, CorrespondenceError> {
    match_with_transforms_in(src_img, p_s, tgt_fm, fx, &Dihedral::ALL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AveragingMode {
    /// Map every contact point, then average the mapped locations.
    #[default]
    MapThenAverage,
    /// Average the contact points, then map the single centroid.
    AverageThenMap,
}

impl std::str::FromStr for AveragingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "map-then-average" => Ok(Self::MapThenAverage),
            "average-then-map" => Ok(Self::AverageThenMap),
            _ => Err(format!(
                "unknown averaging mode {s:?} (map-then-average | average-then-map)"
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TransferConfig {
    pub averaging_mode: AveragingMode,
    pub use_transforms: bool,
    pub resample_radius: f64,
    pub resample_count: usize,
    pub rng_seed: u64,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            averaging_mode: AveragingMode::MapThenAverage,
            use_transforms: true,
            resample_radius: 4.0,
            resample_count: 5,
            rng_seed: 7,
        }
    }
}

impl TransferConfig {
    pub fn transforms(&self) -> &'static [Dihedral] {
        if self.use_transforms {
            &Dihedral::ALL
        } else {
            &Dihedral::ALL[..1]
        }
    }
}

/// How one shortlisted source mapped onto the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceScore {
    pub record_id: String,
    pub mean_similarity: f64,
    pub mean_location: Point2,
    pub matches: Vec<MatchResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    /// Final contact points in target image coordinates.
    pub points: ContactPointSet,
    /// Summary for the chosen source: centroid, mean similarity, and the
    /// transform of its strongest point match.
    pub best: MatchResult,
    pub sources: Vec<SourceScore>,
}

fn score_source(
    rec: &AffordanceRecord,
    tgt_fm: &DenseFeatureMap,
    fx: &dyn FeatureExtractor,
    cfg: &TransferConfig,
) -> Result<SourceScore, CorrespondenceError> {
    let queries: Vec<Point2> = match cfg.averaging_mode {
        AveragingMode::MapThenAverage => rec.contact_points.clone(),
        AveragingMode::AverageThenMap => {
            let c = centroid(&rec.contact_points).ok_or(CorrespondenceError::NoSources)?;
            vec![rec.crop.size().clamp(c.rounded())]
        }
    };
    let mut matches =
        match_points_with_transforms(&rec.crop, &queries, tgt_fm, fx, cfg.transforms())?;
    for m in &mut matches {
        m.source_record_id = Some(rec.id.clone());
    }
    let n = matches.len() as f64;
    let mean_similarity = matches.iter().map(|m| m.similarity).sum::<f64>() / n;
    let located: Vec<Point2> = matches.iter().map(|m| m.target_point).collect();
    Ok(SourceScore {
        record_id: rec.id.clone(),
        mean_similarity,
        mean_location: centroid(&located).expect("at least one match"),
        matches,
    })
}

/// Maps each shortlisted source onto the target, keeps the source with the
/// highest mean similarity (earlier sources win ties), and resamples the
/// final points on a disk around its mean mapped location.
///
/// Sources whose points cannot be described (zero descriptors, points off
/// the crop) are skipped; other failures abort.
pub fn transfer_affordance(
    sources: &[&AffordanceRecord],
    tgt_img: &RasterImage,
    tgt_fm: &DenseFeatureMap,
    fx: &dyn FeatureExtractor,
    cfg: &TransferConfig,
) -> Result<TransferOutcome, CorrespondenceError> {
    if sources.is_empty() {
        return Err(CorrespondenceError::NoSources);
    }
    let mut scored = Vec::with_capacity(sources.len());
    let mut last_err = None;
    for rec in sources {
        match score_source(rec, tgt_fm, fx, cfg) {
            Ok(s) => scored.push(s),
            Err(e @ (CorrespondenceError::ZeroFeature | CorrespondenceError::OutOfBounds(_))) => {
                log::warn!("source {} skipped: {e}", rec.id);
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let best_idx = scored
        .iter()
        .enumerate()
        .fold(None::<usize>, |best, (i, s)| match best {
            Some(b) if scored[b].mean_similarity >= s.mean_similarity => Some(b),
            _ => Some(i),
        })
        .ok_or_else(|| {
            CorrespondenceError::AllSourcesFailed(Box::new(
                last_err.unwrap_or(CorrespondenceError::NoSources),
            ))
        })?;
    let chosen = &scored[best_idx];
    let strongest = chosen
        .matches
        .iter()
        .reduce(|a, b| if b.similarity > a.similarity { b } else { a })
        .expect("non-empty matches");
    let bounds = tgt_img.size();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let points = resample_disk(
        chosen.mean_location,
        cfg.resample_radius,
        cfg.resample_count,
        bounds,
        &mut rng,
    );
    Ok(TransferOutcome {
        points: ContactPointSet::new(points, 0),
        best: MatchResult {
            target_point: chosen.mean_location,
            similarity: chosen.mean_similarity,
            transform: strongest.transform,
            source_record_id: Some(chosen.record_id.clone()),
        },
        sources: scored,
    })
}
