//! Contact-point extraction from annotated interaction videos.
//!
//! The flow for one video is: find the first hand/object contact frame,
//! sample contact points where the hand box, object box and skin mask
//! overlap, pick the sharpest unobstructed frame near contact, carry the
//! points there through chained frame-to-frame homographies, collapse them
//! onto a small disk around their centroid, and crop to the object box.

mod blur;
mod corners;
mod homography;
mod skin;

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use blur::{box_blur3, laplacian_blur_score};
pub use corners::{harris_corners, match_corners, Corner, MatcherConfig};
pub use homography::{
    compose, estimate_homography, estimate_homography_in, fit_homography_dlt,
    fit_homography_ransac, Homography, HomographyConfig, RansacConfig, RansacFit,
};
pub use skin::{is_skin, skin_mask_from_rgb};

use crate::geometry::{centroid, resample_disk, BBox, ImageSize, Point2};
use crate::io::{GroundTruthMask, IoError, RasterError, RasterImage};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("no frame has hand/object contact")]
    NoContactFrame,
    #[error("frame {0} is not marked as in contact")]
    NotInContact(usize),
    #[error("hand and object boxes do not intersect")]
    NoIntersection,
    #[error("hand/object intersection contains no skin pixels")]
    NoSkinPixels,
    #[error("mask is {mask:?} but frame is {frame:?}")]
    SizeMismatch { frame: ImageSize, mask: ImageSize },
    #[error("image is empty")]
    EmptyImage,
    #[error("only {0} correspondences, at least 4 required")]
    TooFewMatches(usize),
    #[error("degenerate (collinear or singular) configuration")]
    DegenerateConfiguration,
    #[error("RANSAC consensus too small ({0} inliers)")]
    NoConsensus(usize),
    #[error("every propagated point left the frame")]
    AllPointsOutOfBounds,
    #[error("crop box is empty or outside the frame")]
    EmptyCrop,
    #[error("no contact point lies inside the object box")]
    AllPointsOutsideBbox,
    #[error("frame {0} has no object box")]
    MissingObjectBbox(usize),
    #[error("empty contact point set")]
    EmptyPointSet,
    #[error("invalid video sequence: {0}")]
    InvalidSequence(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] IoError),
}

/// Detector output for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetection {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    pub hand_bbox: Option<BBox>,
    pub object_bbox: Option<BBox>,
    #[serde(rename = "contact")]
    pub in_contact: bool,
}

impl FrameDetection {
    /// Object box present and not overlapped by the hand box.
    pub fn is_unobstructed(&self) -> bool {
        match (self.object_bbox, self.hand_bbox) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(o), Some(h)) => o.intersect(&h).is_none(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VideoSequence {
    frames: Vec<RasterImage>,
    detections: Vec<FrameDetection>,
    skin_masks: Vec<Option<GroundTruthMask>>,
}

impl VideoSequence {
    pub fn new(
        frames: Vec<RasterImage>,
        detections: Vec<FrameDetection>,
    ) -> Result<Self, ExtractionError> {
        let n = frames.len();
        Self::with_skin_masks(frames, detections, vec![None; n])
    }

    pub fn with_skin_masks(
        frames: Vec<RasterImage>,
        detections: Vec<FrameDetection>,
        skin_masks: Vec<Option<GroundTruthMask>>,
    ) -> Result<Self, ExtractionError> {
        let bad = |m: String| Err(ExtractionError::InvalidSequence(m));
        if frames.is_empty() {
            return bad("no frames".into());
        }
        if frames.len() != detections.len() || frames.len() != skin_masks.len() {
            return bad(format!(
                "{} frames, {} detections, {} skin slots",
                frames.len(),
                detections.len(),
                skin_masks.len()
            ));
        }
        for (i, (f, d)) in frames.iter().zip(&detections).enumerate() {
            if d.frame_index != i {
                return bad(format!("detection {i} is labelled frame {}", d.frame_index));
            }
            for b in [d.hand_bbox, d.object_bbox].into_iter().flatten() {
                if !b.fits_in(f.size()) {
                    return bad(format!("frame {i}: box {b:?} exceeds {:?}", f.size()));
                }
            }
            if d.in_contact && (d.hand_bbox.is_none() || d.object_bbox.is_none()) {
                return bad(format!("frame {i}: contact without both boxes"));
            }
            if let Some(m) = &skin_masks[i] {
                if m.size() != f.size() {
                    return Err(ExtractionError::SizeMismatch {
                        frame: f.size(),
                        mask: m.size(),
                    });
                }
            }
        }
        Ok(Self {
            frames,
            detections,
            skin_masks,
        })
    }

    /// Loads `frames/*.png` (sorted by name), `detections.jsonl`, and the
    /// optional same-named masks under `skin/`.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ExtractionError> {
        let dir = dir.as_ref();
        let frame_dir = dir.join("frames");
        let mut names: Vec<PathBuf> = fs::read_dir(&frame_dir)
            .map_err(|e| IoError::fs(&frame_dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
            .collect();
        names.sort();
        let mut frames = Vec::with_capacity(names.len());
        let mut skin = Vec::with_capacity(names.len());
        for p in &names {
            frames.push(RasterImage::load(p)?);
            let sp = dir.join("skin").join(p.file_name().unwrap());
            skin.push(if sp.exists() {
                Some(GroundTruthMask::load(&sp)?)
            } else {
                None
            });
        }
        let mut detections: Vec<FrameDetection> =
            crate::io::read_jsonl(dir.join("detections.jsonl"))?;
        detections.sort_by_key(|d| d.frame_index);
        Self::with_skin_masks(frames, detections, skin)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[RasterImage] {
        &self.frames
    }

    pub fn detections(&self) -> &[FrameDetection] {
        &self.detections
    }

    /// The ingested skin mask for a frame, or the colour-threshold fallback.
    pub fn skin_mask(&self, i: usize) -> GroundTruthMask {
        self.skin_masks[i]
            .clone()
            .unwrap_or_else(|| skin_mask_from_rgb(&self.frames[i]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactPointSet {
    pub points: Vec<Point2>,
    pub frame_index: usize,
}

impl ContactPointSet {
    pub fn new(points: Vec<Point2>, frame_index: usize) -> Self {
        Self {
            points,
            frame_index,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Where frame-to-frame homographies look for correspondences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HomographyRegion {
    #[default]
    FullFrame,
    ObjectBbox,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtractionConfig {
    /// Frames searched on each side of the contact frame.
    pub window_half_width: usize,
    /// Points sampled from the hand/object/skin overlap.
    pub sample_count: usize,
    pub resample_radius: f64,
    pub resample_count: usize,
    pub rng_seed: u64,
    pub homography_region: HomographyRegion,
    #[serde(skip)]
    pub homography: HomographyConfig,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            window_half_width: 15,
            sample_count: 10,
            resample_radius: 4.0,
            resample_count: 5,
            rng_seed: 7,
            homography_region: HomographyRegion::FullFrame,
            homography: HomographyConfig::default(),
        }
    }
}

pub fn find_contact_frame(v: &VideoSequence) -> Result<usize, ExtractionError> {
    v.detections
        .iter()
        .position(|d| d.in_contact)
        .ok_or(ExtractionError::NoContactFrame)
}

/// Uniform draws, with replacement, from skin pixels inside the hand/object
/// box intersection.
pub fn sample_contact_points(
    frame: &RasterImage,
    det: &FrameDetection,
    skin_mask: &GroundTruthMask,
    cfg: &ExtractionConfig,
) -> Result<ContactPointSet, ExtractionError> {
    if !det.in_contact {
        return Err(ExtractionError::NotInContact(det.frame_index));
    }
    if skin_mask.size() != frame.size() {
        return Err(ExtractionError::SizeMismatch {
            frame: frame.size(),
            mask: skin_mask.size(),
        });
    }
    let (Some(hand), Some(obj)) = (det.hand_bbox, det.object_bbox) else {
        return Err(ExtractionError::NoIntersection);
    };
    let frame_box = BBox::new(0, 0, frame.width(), frame.height());
    let region = hand
        .intersect(&obj)
        .and_then(|r| r.intersect(&frame_box))
        .ok_or(ExtractionError::NoIntersection)?;
    let mut candidates = Vec::new();
    for y in region.y..region.bottom() {
        for x in region.x..region.right() {
            if skin_mask.get(x, y) > 0 {
                candidates.push(Point2::new(x as f64, y as f64));
            }
        }
    }
    if candidates.is_empty() {
        return Err(ExtractionError::NoSkinPixels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let points = (0..cfg.sample_count.max(1))
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect();
    Ok(ContactPointSet::new(points, det.frame_index))
}

/// Sharpest frame within `window_half_width` of `contact`, preferring frames
/// whose object is not overlapped by the hand. Ties go to the earlier frame.
pub fn select_clear_frame(
    v: &VideoSequence,
    contact: usize,
    cfg: &ExtractionConfig,
) -> Result<usize, ExtractionError> {
    if contact >= v.len() {
        return Err(ExtractionError::InvalidSequence(format!(
            "contact frame {contact} out of range"
        )));
    }
    let lo = contact.saturating_sub(cfg.window_half_width);
    let hi = (contact + cfg.window_half_width).min(v.len() - 1);
    let mut scored = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        scored.push((i, laplacian_blur_score(&v.frames[i])?));
    }
    let argmax = |it: &mut dyn Iterator<Item = &(usize, f64)>| {
        it.fold(None::<(usize, f64)>, |best, &(i, s)| match best {
            Some((_, bs)) if bs >= s => best,
            _ => Some((i, s)),
        })
    };
    let clear = argmax(
        &mut scored
            .iter()
            .filter(|(i, _)| v.detections[*i].is_unobstructed()),
    );
    let pick = clear.or_else(|| argmax(&mut scored.iter())).unwrap();
    Ok(pick.0)
}

/// Maps points through the composed chain and drops those leaving `bounds`.
/// Coordinates stay real-valued; rounding happens at final emission.
pub fn propagate_points(
    p: &ContactPointSet,
    chain: &[Homography],
    bounds: ImageSize,
) -> Result<ContactPointSet, ExtractionError> {
    let h = compose(chain);
    let points: Vec<Point2> = p
        .points
        .iter()
        .filter_map(|&q| h.apply(q))
        .filter(|q| bounds.contains(q))
        .collect();
    if points.is_empty() {
        return Err(ExtractionError::AllPointsOutOfBounds);
    }
    Ok(ContactPointSet::new(points, p.frame_index))
}

/// Centroid (rounded to a pixel) resampled into `resample_count` points on
/// the lattice disk of `resample_radius`, clamped to `bounds`.
pub fn finalize_contact_points(
    p: &ContactPointSet,
    bounds: ImageSize,
    cfg: &ExtractionConfig,
) -> Result<ContactPointSet, ExtractionError> {
    let c = centroid(&p.points).ok_or(ExtractionError::EmptyPointSet)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let points = resample_disk(c, cfg.resample_radius, cfg.resample_count, bounds, &mut rng);
    Ok(ContactPointSet::new(points, p.frame_index))
}

/// Crops the frame to `bbox` and re-expresses points in crop coordinates,
/// dropping any that fall outside the box.
pub fn crop_object(
    frame: &RasterImage,
    bbox: BBox,
    pts: &ContactPointSet,
) -> Result<(RasterImage, ContactPointSet), ExtractionError> {
    if bbox.is_empty() || !bbox.fits_in(frame.size()) {
        return Err(ExtractionError::EmptyCrop);
    }
    let crop = frame.crop(bbox)?;
    let points: Vec<Point2> = pts
        .points
        .iter()
        .filter_map(|p| {
            let (x, y) = p.pixel(frame.size())?;
            bbox.contains_pixel(x, y)
                .then(|| Point2::new(p.x - bbox.x as f64, p.y - bbox.y as f64))
        })
        .collect();
    if points.is_empty() {
        return Err(ExtractionError::AllPointsOutsideBbox);
    }
    Ok((crop, ContactPointSet::new(points, pts.frame_index)))
}

/// Everything extraction learns from one video.
#[derive(Debug, Clone)]
pub struct ExtractedAffordance {
    pub crop: RasterImage,
    /// In crop coordinates.
    pub contact_points: ContactPointSet,
    pub contact_frame: usize,
    pub clear_frame: usize,
    pub object_bbox: BBox,
}

/// Homographies carrying frame `from` coordinates to frame `to`, one per
/// consecutive pair, in application order.
pub fn homography_chain(
    v: &VideoSequence,
    from: usize,
    to: usize,
    cfg: &ExtractionConfig,
) -> Result<Vec<Homography>, ExtractionError> {
    let steps: Vec<(usize, usize)> = if to >= from {
        (from..to).map(|t| (t, t + 1)).collect()
    } else {
        (to + 1..=from).rev().map(|t| (t, t - 1)).collect()
    };
    steps
        .into_iter()
        .map(|(a, b)| {
            let (ra, rb) = match cfg.homography_region {
                HomographyRegion::FullFrame => (None, None),
                HomographyRegion::ObjectBbox => {
                    (v.detections[a].object_bbox, v.detections[b].object_bbox)
                }
            };
            estimate_homography_in(
                &v.frames[a],
                &v.frames[b],
                None,
                ra,
                rb,
                &cfg.homography,
            )
        })
        .collect()
}

pub fn extract_video(
    v: &VideoSequence,
    cfg: &ExtractionConfig,
) -> Result<ExtractedAffordance, ExtractionError> {
    let j = find_contact_frame(v)?;
    let sampled = sample_contact_points(&v.frames[j], &v.detections[j], &v.skin_mask(j), cfg)?;
    let c = select_clear_frame(v, j, cfg)?;
    let object_bbox = v.detections[c]
        .object_bbox
        .ok_or(ExtractionError::MissingObjectBbox(c))?;
    let chain = homography_chain(v, j, c, cfg)?;
    let size = v.frames[c].size();
    let mut moved = propagate_points(&sampled, &chain, size)?;
    moved.frame_index = c;
    let finalized = finalize_contact_points(&moved, size, cfg)?;
    let (crop, contact_points) = crop_object(&v.frames[c], object_bbox, &finalized)?;
    Ok(ExtractedAffordance {
        crop,
        contact_points,
        contact_frame: j,
        clear_frame: c,
        object_bbox,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(i: usize, contact: bool) -> FrameDetection {
        FrameDetection {
            frame_index: i,
            hand_bbox: contact.then_some(BBox::new(0, 0, 4, 4)),
            object_bbox: Some(BBox::new(2, 2, 4, 4)),
            in_contact: contact,
        }
    }

    fn video(flags: &[bool]) -> VideoSequence {
        let frames = flags
            .iter()
            .map(|_| RasterImage::gray_from_fn(8, 8, |_, _| 0))
            .collect();
        let dets = flags.iter().enumerate().map(|(i, &c)| det(i, c)).collect();
        VideoSequence::new(frames, dets).unwrap()
    }

    #[test]
    fn first_contact() {
        assert_eq!(find_contact_frame(&video(&[false, false, true, true])).unwrap(), 2);
        assert_eq!(find_contact_frame(&video(&[true, false])).unwrap(), 0);
        assert!(matches!(
            find_contact_frame(&video(&[false, false])),
            Err(ExtractionError::NoContactFrame)
        ));
    }

    #[test]
    fn detection_jsonl_shape() {
        let d: FrameDetection = serde_json::from_str(
            r#"{"frame": 3, "hand_bbox": [1,2,3,4], "object_bbox": null, "contact": false}"#,
        )
        .unwrap();
        assert_eq!(d.frame_index, 3);
        assert_eq!(d.hand_bbox, Some(BBox::new(1, 2, 3, 4)));
        assert!(d.object_bbox.is_none());
    }

    #[test]
    fn contact_requires_both_boxes() {
        let frames = vec![RasterImage::gray_from_fn(8, 8, |_, _| 0)];
        let d = FrameDetection {
            frame_index: 0,
            hand_bbox: None,
            object_bbox: Some(BBox::new(0, 0, 2, 2)),
            in_contact: true,
        };
        assert!(VideoSequence::new(frames, vec![d]).is_err());
    }

    #[test]
    fn single_skin_pixel_is_every_sample() {
        let frame = RasterImage::gray_from_fn(20, 20, |_, _| 0);
        let d = FrameDetection {
            frame_index: 0,
            hand_bbox: Some(BBox::new(0, 0, 12, 12)),
            object_bbox: Some(BBox::new(5, 5, 10, 10)),
            in_contact: true,
        };
        let skin = GroundTruthMask::from_fn(20, 20, |x, y| if (x, y) == (7, 9) { 255 } else { 0 });
        let cfg = ExtractionConfig {
            sample_count: 6,
            ..Default::default()
        };
        let p = sample_contact_points(&frame, &d, &skin, &cfg).unwrap();
        assert_eq!(p.points, vec![Point2::new(7.0, 9.0); 6]);
    }

    #[test]
    fn disjoint_boxes_and_missing_skin() {
        let frame = RasterImage::gray_from_fn(20, 20, |_, _| 0);
        let mut d = FrameDetection {
            frame_index: 0,
            hand_bbox: Some(BBox::new(0, 0, 5, 5)),
            object_bbox: Some(BBox::new(10, 10, 5, 5)),
            in_contact: true,
        };
        let skin = GroundTruthMask::from_fn(20, 20, |_, _| 255);
        let cfg = ExtractionConfig::default();
        assert!(matches!(
            sample_contact_points(&frame, &d, &skin, &cfg),
            Err(ExtractionError::NoIntersection)
        ));
        d.hand_bbox = Some(BBox::new(8, 8, 5, 5));
        let no_skin = GroundTruthMask::from_fn(20, 20, |_, _| 0);
        assert!(matches!(
            sample_contact_points(&frame, &d, &no_skin, &cfg),
            Err(ExtractionError::NoSkinPixels)
        ));
    }

    #[test]
    fn crop_offsets_points() {
        let frame = RasterImage::gray_from_fn(100, 100, |x, _| x as u8);
        let pts = ContactPointSet::new(vec![Point2::new(15.0, 20.0), Point2::new(80.0, 80.0)], 0);
        let (crop, out) = crop_object(&frame, BBox::new(10, 10, 50, 50), &pts).unwrap();
        assert_eq!((crop.width(), crop.height()), (50, 50));
        assert_eq!(out.points, vec![Point2::new(5.0, 10.0)]);
        let (whole, same) = crop_object(&frame, BBox::new(0, 0, 100, 100), &pts).unwrap();
        assert_eq!(whole, frame);
        assert_eq!(same.points, pts.points);
        let outside = ContactPointSet::new(vec![Point2::new(99.0, 99.0)], 0);
        assert!(matches!(
            crop_object(&frame, BBox::new(10, 10, 50, 50), &outside),
            Err(ExtractionError::AllPointsOutsideBbox)
        ));
        assert!(matches!(
            crop_object(&frame, BBox::new(90, 90, 20, 20), &pts),
            Err(ExtractionError::EmptyCrop)
        ));
    }

    #[test]
    fn propagation_bounds() {
        let p = ContactPointSet::new(vec![Point2::new(10.0, 10.0)], 0);
        let size = ImageSize::new(100, 100);
        assert_eq!(propagate_points(&p, &[], size).unwrap(), p);
        assert!(matches!(
            propagate_points(&p, &[Homography::translation(-15.0, -7.0)], size),
            Err(ExtractionError::AllPointsOutOfBounds)
        ));
    }

    #[test]
    fn finalize_single_point_zero_radius() {
        let cfg = ExtractionConfig {
            resample_radius: 0.0,
            ..Default::default()
        };
        let p = ContactPointSet::new(vec![Point2::new(20.0, 20.0)], 0);
        let out = finalize_contact_points(&p, ImageSize::new(64, 64), &cfg).unwrap();
        assert_eq!(out.points, vec![Point2::new(20.0, 20.0); 5]);
    }

    #[test]
    fn finalize_near_border_clamps() {
        let cfg = ExtractionConfig::default();
        let p = ContactPointSet::new(vec![Point2::new(1.0, 1.0)], 0);
        let size = ImageSize::new(30, 30);
        for seed in 0..50 {
            let cfg = ExtractionConfig {
                rng_seed: seed,
                ..cfg.clone()
            };
            let out = finalize_contact_points(&p, size, &cfg).unwrap();
            for q in &out.points {
                assert!(size.contains(q));
                assert!(q.distance(&Point2::new(1.0, 1.0)) <= 4.0);
            }
        }
    }
}
