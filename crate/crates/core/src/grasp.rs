//! Lifting a contact pixel to 3-D and choosing the nearest grasp.
//!
//! Selection looks at translation only: the winner minimises `‖t − p*‖`,
//! with ties broken by higher score and then by list position.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::{CameraIntrinsics, DepthImage};

pub const ORTHONORMAL_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_MAX_DISTANCE: f64 = 0.1;
pub const DEPTH_WINDOW: u32 = 5;

#[derive(Debug, Error)]
pub enum GraspError {
    #[error("depth is zero at the contact pixel")]
    ZeroDepth,
    #[error("no grasp candidates")]
    EmptyCandidateSet,
    #[error("grasp {index}: rotation is not orthonormal")]
    NonOrthonormalRotation { index: usize },
    #[error("grasp {index}: invalid width or translation")]
    InvalidCandidate { index: usize },
    #[error("nearest grasp is {distance:.4} m away (limit {limit} m)")]
    TooFar { distance: f64, limit: f64 },
    #[error("pixel ({0}, {1}) outside the depth image")]
    OutOfBounds(u32, u32),
    #[error("cannot parse grasp file {path}: {reason}")]
    ParseFailure { path: String, reason: String },
}

/// A 7-DoF parallel-jaw grasp: rotation, translation (metres) and width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspCandidate {
    #[serde(rename = "R")]
    pub rotation: [[f64; 3]; 3],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
    pub width: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

impl GraspCandidate {
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3], width: f64, score: Option<f64>) -> Self {
        Self {
            rotation,
            translation,
            width,
            score,
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// `RᵀR ≈ I` and `det R ≈ +1`, both within [`ORTHONORMAL_TOLERANCE`].
    pub fn is_orthonormal(&self) -> bool {
        let r = self.rotation_matrix();
        let err = (r.transpose() * r - Matrix3::identity()).amax();
        err <= ORTHONORMAL_TOLERANCE && (r.determinant() - 1.0).abs() <= ORTHONORMAL_TOLERANCE
    }

    fn validate(&self, index: usize) -> Result<(), GraspError> {
        if !self.is_orthonormal() {
            return Err(GraspError::NonOrthonormalRotation { index });
        }
        let finite = self.translation.iter().all(|v| v.is_finite())
            && self.width.is_finite()
            && self.score.is_none_or(f64::is_finite);
        if !finite || self.width < 0.0 {
            return Err(GraspError::InvalidCandidate { index });
        }
        Ok(())
    }

    pub fn distance_to(&self, p: &ContactPoint3D) -> f64 {
        (self.translation_vector() - p.vector()).norm()
    }
}

/// A contact point in camera coordinates (metres).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactPoint3D {
    pub xyz: [f64; 3],
}

impl ContactPoint3D {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { xyz: [x, y, z] }
    }

    pub fn vector(&self) -> Vector3<f64> {
        Vector3::from(self.xyz)
    }
}

/// Pinhole back-projection of pixel `(u, v)` with a raw depth reading.
pub fn deproject_pixel(
    u: f64,
    v: f64,
    depth: f64,
    intr: &CameraIntrinsics,
) -> Result<ContactPoint3D, GraspError> {
    if !(depth > 0.0) {
        return Err(GraspError::ZeroDepth);
    }
    let z = depth * intr.depth_scale;
    Ok(ContactPoint3D::new(
        (u - intr.cx) * z / intr.fx,
        (v - intr.cy) * z / intr.fy,
        z,
    ))
}

/// Pixel coordinates of a camera-frame point.
pub fn project_point(p: &ContactPoint3D, intr: &CameraIntrinsics) -> (f64, f64) {
    let [x, y, z] = p.xyz;
    (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)
}

/// Median raw depth over the 5×5 window at `(u, v)`, ignoring zero
/// readings. An even count averages the two middle values.
pub fn sample_depth(depth: &DepthImage, u: u32, v: u32) -> Result<f64, GraspError> {
    if u >= depth.width() || v >= depth.height() {
        return Err(GraspError::OutOfBounds(u, v));
    }
    let r = DEPTH_WINDOW / 2;
    let mut vals = Vec::with_capacity((DEPTH_WINDOW * DEPTH_WINDOW) as usize);
    for y in v.saturating_sub(r)..=(v + r).min(depth.height() - 1) {
        for x in u.saturating_sub(r)..=(u + r).min(depth.width() - 1) {
            let d = depth.get(x, y);
            if d > 0 {
                vals.push(d);
            }
        }
    }
    if vals.is_empty() {
        return Err(GraspError::ZeroDepth);
    }
    vals.sort_unstable();
    let n = vals.len();
    Ok(if n % 2 == 1 {
        vals[n / 2] as f64
    } else {
        (vals[n / 2 - 1] as f64 + vals[n / 2] as f64) / 2.0
    })
}

/// Index of the grasp whose translation is nearest to `p`.
pub fn select_grasp_index(
    candidates: &[GraspCandidate],
    p: &ContactPoint3D,
) -> Result<usize, GraspError> {
    let score = |g: &GraspCandidate| g.score.unwrap_or(f64::NEG_INFINITY);
    let mut best: Option<(usize, f64)> = None;
    for (i, g) in candidates.iter().enumerate() {
        let d = g.distance_to(p);
        best = match best {
            None => Some((i, d)),
            Some((b, bd)) if d < bd || (d == bd && score(g) > score(&candidates[b])) => {
                Some((i, d))
            }
            keep => keep,
        };
    }
    best.map(|(i, _)| i).ok_or(GraspError::EmptyCandidateSet)
}

pub fn select_grasp<'a>(
    candidates: &'a [GraspCandidate],
    p: &ContactPoint3D,
) -> Result<&'a GraspCandidate, GraspError> {
    select_grasp_index(candidates, p).map(|i| &candidates[i])
}

/// Like [`select_grasp`] but rejects a winner farther than `max_distance`.
pub fn select_grasp_within<'a>(
    candidates: &'a [GraspCandidate],
    p: &ContactPoint3D,
    max_distance: f64,
) -> Result<&'a GraspCandidate, GraspError> {
    let g = select_grasp(candidates, p)?;
    let distance = g.distance_to(p);
    if distance > max_distance {
        return Err(GraspError::TooFar {
            distance,
            limit: max_distance,
        });
    }
    Ok(g)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GraspFile {
    pub grasps: Vec<GraspCandidate>,
}

pub fn load_grasp_candidates(path: impl AsRef<Path>) -> Result<Vec<GraspCandidate>, GraspError> {
    let path = path.as_ref();
    let fail = |reason: String| GraspError::ParseFailure {
        path: path.display().to_string(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
    let file: GraspFile = serde_json::from_str(&text).map_err(|e| fail(e.to_string()))?;
    for (i, g) in file.grasps.iter().enumerate() {
        g.validate(i)?;
    }
    Ok(file.grasps)
}

#[cfg(test)]
mod tests {
    use super::*;

    const I: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 320.0, 0.001).unwrap()
    }

    #[test]
    fn deproject_examples() {
        let p = deproject_pixel(820.0, 320.0, 1000.0, &intr()).unwrap();
        assert_eq!(p, ContactPoint3D::new(1.0, 0.0, 1.0));
        let c = deproject_pixel(320.0, 320.0, 250.0, &intr()).unwrap();
        assert_eq!(c, ContactPoint3D::new(0.0, 0.0, 0.25));
        assert!(matches!(
            deproject_pixel(1.0, 1.0, 0.0, &intr()),
            Err(GraspError::ZeroDepth)
        ));
    }

    #[test]
    fn nearest_wins() {
        let p = ContactPoint3D::new(0.0, 0.0, 0.0);
        let gs: Vec<_> = [0.20, 0.05, 0.11]
            .iter()
            .map(|&d| GraspCandidate::new(I, [d, 0.0, 0.0], 0.04, None))
            .collect();
        assert_eq!(select_grasp_index(&gs, &p).unwrap(), 1);
        assert!(matches!(
            select_grasp(&[], &p),
            Err(GraspError::EmptyCandidateSet)
        ));
        assert!(matches!(
            select_grasp_within(&gs, &ContactPoint3D::new(1.0, 0.0, 0.0), 0.1),
            Err(GraspError::TooFar { .. })
        ));
    }

    #[test]
    fn ties_prefer_score_then_index() {
        let p = ContactPoint3D::new(0.0, 0.0, 0.0);
        let g = |s| GraspCandidate::new(I, [0.1, 0.0, 0.0], 0.04, s);
        assert_eq!(select_grasp_index(&[g(Some(0.2)), g(Some(0.9))], &p).unwrap(), 1);
        assert_eq!(select_grasp_index(&[g(Some(0.5)), g(Some(0.5))], &p).unwrap(), 0);
        assert_eq!(select_grasp_index(&[g(None), g(Some(0.1))], &p).unwrap(), 1);
    }

    #[test]
    fn orthonormality() {
        assert!(GraspCandidate::new(I, [0.0; 3], 0.0, None).is_orthonormal());
        let twice = [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]];
        assert!(!GraspCandidate::new(twice, [0.0; 3], 0.0, None).is_orthonormal());
        let mirror = [[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(!GraspCandidate::new(mirror, [0.0; 3], 0.0, None).is_orthonormal());
    }

    #[test]
    fn median_skips_zeros() {
        let mut vals = vec![0u16; 25];
        vals[0] = 900;
        vals[12] = 1000;
        vals[24] = 1100;
        let d = DepthImage::new(5, 5, vals).unwrap();
        assert_eq!(sample_depth(&d, 2, 2).unwrap(), 1000.0);
        let empty = DepthImage::new(5, 5, vec![0; 25]).unwrap();
        assert!(matches!(sample_depth(&empty, 2, 2), Err(GraspError::ZeroDepth)));
    }
}
