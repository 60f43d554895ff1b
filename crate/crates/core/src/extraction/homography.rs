//! Planar homographies: normalized DLT, RANSAC, and point propagation.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::corners::{match_corners, MatcherConfig};
use super::ExtractionError;
use crate::geometry::{BBox, Point2};
use crate::io::RasterImage;

/// 3×3 projective map with `h[2][2] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    /// Normalizes so the bottom-right entry is one and checks invertibility.
    pub fn new(m: Matrix3<f64>) -> Result<Self, ExtractionError> {
        let scale = m[(2, 2)];
        if !scale.is_finite() || scale.abs() < 1e-12 {
            return Err(ExtractionError::DegenerateConfiguration);
        }
        let m = m / scale;
        if !m.iter().all(|v| v.is_finite()) || m.determinant().abs() <= 1e-12 {
            return Err(ExtractionError::DegenerateConfiguration);
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, ExtractionError> {
        Self::new(Matrix3::from_row_slice(&rows.concat()))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn inverse(&self) -> Homography {
        // invertibility is a construction invariant
        let inv = self.0.try_inverse().expect("homography is invertible");
        Homography(inv / inv[(2, 2)])
    }

    /// `self` followed by `next`, i.e. the matrix `next · self`.
    pub fn then(&self, next: &Homography) -> Homography {
        let m = next.0 * self.0;
        Homography(m / m[(2, 2)])
    }

    /// Maps a point; `None` when it lands on the line at infinity.
    pub fn apply(&self, p: Point2) -> Option<Point2> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return None;
        }
        let out = Point2::new(v.x / v.z, v.y / v.z);
        out.is_finite().then_some(out)
    }

    pub fn transfer_error(&self, src: Point2, dst: Point2) -> f64 {
        self.apply(src).map_or(f64::INFINITY, |p| p.distance(&dst))
    }
}

/// Composes a chain in frame order; an empty chain is the identity.
pub fn compose(chain: &[Homography]) -> Homography {
    chain
        .iter()
        .fold(Homography::identity(), |acc, h| acc.then(h))
}

#[derive(Debug, Clone)]
pub struct RansacConfig {
    /// Inlier threshold on forward transfer error, pixels.
    pub inlier_threshold: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_threshold: 3.0,
            iterations: 2000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct HomographyConfig {
    pub ransac: RansacConfig,
    pub matcher: MatcherConfig,
}

#[derive(Debug, Clone)]
pub struct RansacFit {
    pub homography: Homography,
    /// Indices of the pairs within the inlier threshold of the final model.
    pub inliers: Vec<usize>,
}

/// Similarity transform moving the centroid to the origin with mean distance √2.
fn normalizer(points: &[Point2]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.y / n));
    let mean_dist = points
        .iter()
        .map(|p| (p.x - mx).hypot(p.y - my))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 0.0 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn transform(m: &Matrix3<f64>, p: &Point2) -> Point2 {
    let v = m * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}

/// True when the point set spans (numerically) less than two dimensions.
fn collinear(points: &[Point2]) -> bool {
    if points.len() < 3 {
        return true;
    }
    let n = points.len() as f64;
    let (mx, my) = points
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.x / n, b + p.y / n));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for p in points {
        let (dx, dy) = (p.x - mx, p.y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    let tr = sxx + syy;
    if tr <= 0.0 {
        return true;
    }
    let det = sxx * syy - sxy * sxy;
    // ratio of the two covariance eigenvalues, bounded by det / tr²
    det / (tr * tr) < 1e-10
}

fn any_triple_collinear(points: &[Point2]) -> bool {
    let n = points.len();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                let (a, b, c) = (points[i], points[j], points[k]);
                let cross = (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
                let scale = a.distance(&b).max(a.distance(&c)).max(b.distance(&c));
                if cross.abs() <= 1e-9 * scale * scale.max(1.0) {
                    return true;
                }
            }
        }
    }
    false
}

/// Normalized direct linear transform over at least four correspondences.
pub fn fit_homography_dlt(pairs: &[(Point2, Point2)]) -> Result<Homography, ExtractionError> {
    if pairs.len() < 4 {
        return Err(ExtractionError::TooFewMatches(pairs.len()));
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(ExtractionError::DegenerateConfiguration);
    }
    let ts = normalizer(&src);
    let td = normalizer(&dst);

    // pad to at least 9 rows so the SVD exposes the full right null space
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(&dst).enumerate() {
        let s = transform(&ts, s);
        let d = transform(&td, d);
        let r = 2 * i;
        a.row_mut(r).copy_from_slice(&[
            -s.x, -s.y, -1.0, 0.0, 0.0, 0.0, d.x * s.x, d.x * s.y, d.x,
        ]);
        a.row_mut(r + 1).copy_from_slice(&[
            0.0, 0.0, 0.0, -s.x, -s.y, -1.0, d.y * s.x, d.y * s.y, d.y,
        ]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(ExtractionError::DegenerateConfiguration)?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or(ExtractionError::DegenerateConfiguration)?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td
        .try_inverse()
        .ok_or(ExtractionError::DegenerateConfiguration)?;
    Homography::new(td_inv * hn * ts)
}

fn inliers_of(h: &Homography, pairs: &[(Point2, Point2)], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, (s, d))| h.transfer_error(*s, *d) < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// RANSAC over minimal 4-point samples, then least-squares refits on the
/// consensus set until it stops changing.
pub fn fit_homography_ransac(
    pairs: &[(Point2, Point2)],
    cfg: &RansacConfig,
) -> Result<RansacFit, ExtractionError> {
    if pairs.len() < 4 {
        return Err(ExtractionError::TooFewMatches(pairs.len()));
    }
    let src: Vec<Point2> = pairs.iter().map(|p| p.0).collect();
    let dst: Vec<Point2> = pairs.iter().map(|p| p.1).collect();
    if collinear(&src) || collinear(&dst) {
        return Err(ExtractionError::DegenerateConfiguration);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, Homography)> = None;
    let mut sample_buf = Vec::with_capacity(4);
    for _ in 0..cfg.iterations {
        let idx = sample(&mut rng, pairs.len(), 4);
        sample_buf.clear();
        sample_buf.extend(idx.iter().map(|i| pairs[i]));
        let s: Vec<Point2> = sample_buf.iter().map(|p| p.0).collect();
        let d: Vec<Point2> = sample_buf.iter().map(|p| p.1).collect();
        if any_triple_collinear(&s) || any_triple_collinear(&d) {
            continue;
        }
        let Ok(h) = fit_homography_dlt(&sample_buf) else {
            continue;
        };
        let count = pairs
            .iter()
            .filter(|(s, d)| h.transfer_error(*s, *d) < cfg.inlier_threshold)
            .count();
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, h));
            if count == pairs.len() {
                break;
            }
        }
    }
    let (count, mut h) = best.ok_or(ExtractionError::NoConsensus(0))?;
    if count < 4 {
        return Err(ExtractionError::NoConsensus(count));
    }

    let mut inliers = inliers_of(&h, pairs, cfg.inlier_threshold);
    for _ in 0..5 {
        if inliers.len() < 4 {
            break;
        }
        let subset: Vec<(Point2, Point2)> = inliers.iter().map(|&i| pairs[i]).collect();
        let Ok(refit) = fit_homography_dlt(&subset) else {
            break;
        };
        let next = inliers_of(&refit, pairs, cfg.inlier_threshold);
        if next.len() < inliers.len() {
            break;
        }
        h = refit;
        let stable = next == inliers;
        inliers = next;
        if stable {
            break;
        }
    }
    if inliers.len() < 4 {
        return Err(ExtractionError::NoConsensus(inliers.len()));
    }
    Ok(RansacFit {
        homography: h,
        inliers,
    })
}

/// Homography mapping `src` pixel coordinates into `dst`.
///
/// With `matches` absent, correspondences come from the built-in Harris/NCC
/// matcher, optionally restricted to regions of interest in each frame.
pub fn estimate_homography(
    src: &RasterImage,
    dst: &RasterImage,
    matches: Option<&[(Point2, Point2)]>,
    cfg: &HomographyConfig,
) -> Result<Homography, ExtractionError> {
    estimate_homography_in(src, dst, matches, None, None, cfg)
}

pub fn estimate_homography_in(
    src: &RasterImage,
    dst: &RasterImage,
    matches: Option<&[(Point2, Point2)]>,
    src_roi: Option<BBox>,
    dst_roi: Option<BBox>,
    cfg: &HomographyConfig,
) -> Result<Homography, ExtractionError> {
    let owned;
    let pairs = match matches {
        Some(m) => m,
        None => {
            owned = match_corners(src, dst, src_roi, dst_roi, &cfg.matcher);
            &owned[..]
        }
    };
    if pairs.len() < 4 {
        return Err(ExtractionError::TooFewMatches(pairs.len()));
    }
    Ok(fit_homography_ransac(pairs, &cfg.ransac)?.homography)
}
