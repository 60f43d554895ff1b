//! Synthetic desk-scale corpus with known answers.
//!
//! Each video pans a camera over a textured world holding one rectangular
//! object sprite. A skin-coloured "hand" approaches the object, rests over
//! its handle zone for a few frames, and leaves. Some frames are blurred.
//! Detections are exact. Half of the videos ship skin masks; the rest rely
//! on the colour-threshold fallback.
//!
//! Targets are the sprites themselves (identity manifest) and their seven
//! non-trivial dihedral images (dihedral manifest). Ground-truth masks mark
//! the handle zone with 255 and a thin halo with 96.
//!
//! ```text
//! <out>/videos/<id>/frames/NNN.png  detections.jsonl  meta.json  [skin/NNN.png]
//! <out>/targets/<target>.png        <out>/masks/<target>.png
//! <out>/manifest_identity.json      <out>/manifest_dihedral.json
//! <out>/grasp/{depth.png,intrinsics.json,grasps.json}
//! <out>/fixtures.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::correspondence::Dihedral;
use crate::evaluation::{DatasetManifest, ManifestEntry};
use crate::extraction::{box_blur3, is_skin, FrameDetection};
use crate::geometry::BBox;
use crate::grasp::{GraspCandidate, GraspFile};
use crate::io::{write_json, write_jsonl, CameraIntrinsics, DepthImage, GroundTruthMask, IoError, RasterError, RasterImage};

pub const CATEGORIES: [&str; 5] = ["bottle", "bowl", "cup", "knife", "scissors"];
pub const VIDEOS_PER_CATEGORY: usize = 2;
pub const FRAME_W: u32 = 160;
pub const FRAME_H: u32 = 120;
pub const FRAME_COUNT: usize = 14;
pub const HANDLE_ZONE: u32 = 28;
pub const HALO: u32 = 3;
pub const HAND_RGB: [u8; 3] = [224, 172, 140];

const WORLD_W: u32 = 240;
const WORLD_H: u32 = 180;
const OBJECT_AT: (u32, u32) = (100, 70);
const START: (i64, i64) = (40, 33);
const CONTACT: std::ops::RangeInclusive<usize> = 7..=10;
const APPROACH: std::ops::RangeInclusive<usize> = 4..=6;
const BLURRED: [usize; 3] = [1, 5, 12];
const HAND_RADII: (f64, f64) = (5.0, 4.0);

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("cannot create {0}: {1}")]
    Dir(String, std::io::Error),
}

/// What was planted in one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedVideo {
    pub id: String,
    pub category: String,
    pub sprite_size: [u32; 2],
    /// Handle zone in sprite coordinates.
    pub handle_zone: BBox,
    pub pan: [i64; 2],
    pub skin_masks: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSummary {
    pub seed: u64,
    pub videos: Vec<PlantedVideo>,
    pub identity_targets: usize,
    pub dihedral_targets: usize,
}

impl FixtureSummary {
    pub fn videos_dir(root: &Path) -> PathBuf {
        root.join("videos")
    }

    pub fn identity_manifest(root: &Path) -> PathBuf {
        root.join("manifest_identity.json")
    }

    pub fn dihedral_manifest(root: &Path) -> PathBuf {
        root.join("manifest_dihedral.json")
    }
}

fn mkdir(p: &Path) -> Result<(), FixtureError> {
    fs::create_dir_all(p).map_err(|e| FixtureError::Dir(p.display().to_string(), e))
}

fn jitter(rng: &mut ChaCha8Rng, c: [u8; 3], amp: i32) -> [u8; 3] {
    c.map(|v| (v as i32 + rng.random_range(-amp..=amp)).clamp(0, 255) as u8)
}

/// Nudges a colour out of the skin range by raising blue.
fn unskin(mut c: [u8; 3]) -> [u8; 3] {
    while is_skin(c) {
        c[2] = c[2].saturating_add(16);
        c[0] = c[0].saturating_sub(8);
    }
    c
}

fn random_color(rng: &mut ChaCha8Rng) -> [u8; 3] {
    unskin([
        rng.random_range(0..=255),
        rng.random_range(0..=255),
        rng.random_range(0..=255),
    ])
}

fn world_texture(rng: &mut ChaCha8Rng) -> RasterImage {
    const BLOCK: u32 = 10;
    let bw = WORLD_W.div_ceil(BLOCK);
    let blocks: Vec<[u8; 3]> = (0..bw * WORLD_H.div_ceil(BLOCK))
        .map(|_| random_color(rng))
        .collect();
    let mut img = RasterImage::filled(WORLD_W, WORLD_H, [0, 0, 0]);
    for y in 0..WORLD_H {
        for x in 0..WORLD_W {
            let c = blocks[((y / BLOCK) * bw + x / BLOCK) as usize];
            img.put_rgb(x, y, unskin(jitter(rng, c, 6)));
        }
    }
    img
}

const SPRITE_PALETTE: [[u8; 3]; 10] = [
    [40, 90, 200],
    [40, 170, 60],
    [130, 50, 170],
    [20, 150, 150],
    [230, 210, 40],
    [60, 60, 140],
    [90, 200, 120],
    [200, 60, 200],
    [30, 120, 220],
    [120, 160, 30],
];

fn sprite(rng: &mut ChaCha8Rng, w: u32, h: u32, base: [u8; 3]) -> RasterImage {
    const BLOCK: u32 = 6;
    let bw = w.div_ceil(BLOCK);
    let shades: Vec<i32> = (0..bw * h.div_ceil(BLOCK))
        .map(|_| rng.random_range(-45..=45))
        .collect();
    let mut img = RasterImage::filled(w, h, base);
    for y in 0..h {
        for x in 0..w {
            let s = shades[((y / BLOCK) * bw + x / BLOCK) as usize];
            let c = base.map(|v| (v as i32 + s).clamp(0, 255) as u8);
            img.put_rgb(x, y, unskin(jitter(rng, c, 12)));
        }
    }
    img
}

fn in_ellipse(x: u32, y: u32, cx: f64, cy: f64) -> bool {
    let dx = (x as f64 - cx) / HAND_RADII.0;
    let dy = (y as f64 - cy) / HAND_RADII.1;
    dx * dx + dy * dy <= 1.0
}

fn ellipse_bbox(cx: f64, cy: f64) -> BBox {
    let x0 = (cx - HAND_RADII.0).ceil() as u32;
    let y0 = (cy - HAND_RADII.1).ceil() as u32;
    let x1 = (cx + HAND_RADII.0).floor() as u32;
    let y1 = (cy + HAND_RADII.1).floor() as u32;
    BBox::new(x0, y0, x1 - x0 + 1, y1 - y0 + 1)
}

/// Ground truth for a sprite: 255 on the handle zone, 96 on a thin halo.
pub fn handle_mask(w: u32, h: u32, zone: BBox) -> GroundTruthMask {
    GroundTruthMask::from_fn(w, h, |x, y| {
        if zone.contains_pixel(x, y) {
            255
        } else {
            let near = |v: u32, lo: u32, hi: u32| v + HALO >= lo && v < hi + HALO;
            if near(x, zone.x, zone.right()) && near(y, zone.y, zone.bottom()) {
                96
            } else {
                0
            }
        }
    })
}

struct Video {
    frames: Vec<RasterImage>,
    detections: Vec<FrameDetection>,
    skin: Vec<Option<GroundTruthMask>>,
}

fn render_video(
    rng: &mut ChaCha8Rng,
    sprite_img: &RasterImage,
    zone: BBox,
    pan: (i64, i64),
) -> Video {
    let mut world = world_texture(rng);
    for y in 0..sprite_img.height() {
        for x in 0..sprite_img.width() {
            world.put_rgb(OBJECT_AT.0 + x, OBJECT_AT.1 + y, sprite_img.rgb(x, y));
        }
    }
    let hand_tex: Vec<[u8; 3]> = (0..FRAME_W * FRAME_H)
        .map(|_| jitter(rng, HAND_RGB, 4))
        .collect();
    let mut out = Video {
        frames: Vec::new(),
        detections: Vec::new(),
        skin: Vec::new(),
    };
    for t in 0..FRAME_COUNT {
        let ox = (START.0 + pan.0 * t as i64) as u32;
        let oy = (START.1 + pan.1 * t as i64) as u32;
        let mut frame = world
            .crop(BBox::new(ox, oy, FRAME_W, FRAME_H))
            .expect("camera stays inside the world");
        let obj = BBox::new(
            OBJECT_AT.0 - ox,
            OBJECT_AT.1 - oy,
            sprite_img.width(),
            sprite_img.height(),
        );
        let zc = (
            (obj.x + zone.x) as f64 + (HANDLE_ZONE as f64 - 1.0) / 2.0,
            (obj.y + zone.y) as f64 + (HANDLE_ZONE as f64 - 1.0) / 2.0,
        );
        let hand_center = if CONTACT.contains(&t) {
            Some(zc)
        } else if APPROACH.contains(&t) {
            // off to the left, clear of the object box
            Some((obj.x as f64 - HAND_RADII.0 - 2.0 - (APPROACH.end() - t) as f64 * 3.0, zc.1))
        } else {
            None
        };
        let mut skin = GroundTruthMask::from_fn(FRAME_W, FRAME_H, |_, _| 0);
        let mut hand_bbox = None;
        if let Some((cx, cy)) = hand_center {
            let mut vals = skin.values().to_vec();
            for y in 0..FRAME_H {
                for x in 0..FRAME_W {
                    if in_ellipse(x, y, cx, cy) {
                        frame.put_rgb(x, y, hand_tex[(y * FRAME_W + x) as usize]);
                        vals[(y * FRAME_W + x) as usize] = 255;
                    }
                }
            }
            skin = GroundTruthMask::new(FRAME_W, FRAME_H, vals).expect("frame-sized");
            hand_bbox = Some(ellipse_bbox(cx, cy));
        }
        if BLURRED.contains(&t) {
            frame = box_blur3(&box_blur3(&frame));
        }
        out.frames.push(frame);
        out.detections.push(FrameDetection {
            frame_index: t,
            hand_bbox,
            object_bbox: Some(obj),
            in_contact: CONTACT.contains(&t),
        });
        out.skin.push(Some(skin));
    }
    out
}

fn write_video(dir: &Path, v: &Video, category: &str, skin: bool) -> Result<(), FixtureError> {
    mkdir(&dir.join("frames"))?;
    if skin {
        mkdir(&dir.join("skin"))?;
    }
    for (i, f) in v.frames.iter().enumerate() {
        let name = format!("{i:03}.png");
        f.save_png(dir.join("frames").join(&name))?;
        if skin {
            if let Some(m) = &v.skin[i] {
                m.save_png(dir.join("skin").join(&name))?;
            }
        }
    }
    write_jsonl(&v.detections, dir.join("detections.jsonl"))?;
    write_json(&VideoMeta { category: category.to_string() }, dir.join("meta.json"))?;
    Ok(())
}

/// `meta.json` next to each video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub category: String,
}

fn write_grasp_scene(dir: &Path, rng: &mut ChaCha8Rng) -> Result<(), FixtureError> {
    mkdir(dir)?;
    let (w, h) = (64u32, 48u32);
    let depth = (0..w * h)
        .map(|i| {
            // a tilted plane with sensor dropouts
            let (x, y) = (i % w, i / w);
            if (x * 7 + y * 13) % 17 == 0 {
                0
            } else {
                (700 + x * 2 + y) as u16
            }
        })
        .collect();
    DepthImage::new(w, h, depth)?.save_png(dir.join("depth.png"))?;
    let intr = CameraIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 32.0,
        cy: 24.0,
        depth_scale: 0.001,
    };
    write_json(&intr, dir.join("intrinsics.json"))?;
    let grasps = (0..40)
        .map(|_| {
            let axis = Unit::new_normalize(Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.1..1.0),
            ));
            let r = Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI));
            let m = r.matrix();
            GraspCandidate::new(
                [
                    [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                    [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                    [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
                ],
                [
                    rng.random_range(-0.3..0.3),
                    rng.random_range(-0.2..0.2),
                    rng.random_range(0.6..0.9),
                ],
                rng.random_range(0.02..0.08),
                Some(rng.random_range(0.0..1.0)),
            )
        })
        .collect();
    write_json(&GraspFile { grasps }, dir.join("grasps.json"))?;
    Ok(())
}

/// Writes the whole corpus under `out` (which is created if needed).
/// The same seed always produces byte-identical files.
pub fn generate_fixtures(out: &Path, seed: u64) -> Result<FixtureSummary, FixtureError> {
    for sub in ["videos", "targets", "masks", "grasp"] {
        mkdir(&out.join(sub))?;
    }
    let mut identity = DatasetManifest::default();
    let mut dihedral = DatasetManifest::default();
    let mut videos = Vec::new();
    for (ci, cat) in CATEGORIES.iter().enumerate() {
        for n in 0..VIDEOS_PER_CATEGORY {
            let idx = ci * VIDEOS_PER_CATEGORY + n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9).wrapping_add(idx as u64));
            let (w, h) = (rng.random_range(52..=64), rng.random_range(44..=56));
            let zone = BBox::new(
                rng.random_range(2..=w - HANDLE_ZONE - 2),
                rng.random_range(2..=h - HANDLE_ZONE - 2),
                HANDLE_ZONE,
                HANDLE_ZONE,
            );
            let pan = loop {
                let p = (rng.random_range(-2..=2), rng.random_range(-2..=2));
                if p != (0, 0) {
                    break p;
                }
            };
            let spr = sprite(&mut rng, w, h, SPRITE_PALETTE[idx % SPRITE_PALETTE.len()]);
            let video = render_video(&mut rng, &spr, zone, pan);
            let id = format!("{cat}-{n}");
            let skin = n % 2 == 0;
            write_video(&out.join("videos").join(&id), &video, cat, skin)?;

            let mask = handle_mask(w, h, zone);
            for t in Dihedral::ALL {
                let tid = if t == Dihedral::R0 {
                    id.clone()
                } else {
                    format!("{id}.{t}")
                };
                let img_rel = PathBuf::from("targets").join(format!("{tid}.png"));
                let mask_rel = PathBuf::from("masks").join(format!("{tid}.png"));
                t.apply(&spr).save_png(out.join(&img_rel))?;
                GroundTruthMask::from(&t.apply(&mask.as_image())).save_png(out.join(&mask_rel))?;
                let entry = ManifestEntry {
                    image: img_rel,
                    mask: mask_rel,
                    category: cat.to_string(),
                    seen: true,
                };
                if t == Dihedral::R0 {
                    identity.entries.insert(tid, entry);
                } else {
                    dihedral.entries.insert(tid, entry);
                }
            }
            videos.push(PlantedVideo {
                id,
                category: cat.to_string(),
                sprite_size: [w, h],
                handle_zone: zone,
                pan: [pan.0, pan.1],
                skin_masks: skin,
            });
        }
    }
    write_json(&identity, FixtureSummary::identity_manifest(out))?;
    write_json(&dihedral, FixtureSummary::dihedral_manifest(out))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    write_grasp_scene(&out.join("grasp"), &mut rng)?;
    let summary = FixtureSummary {
        seed,
        identity_targets: identity.entries.len(),
        dihedral_targets: dihedral.entries.len(),
        videos,
    };
    write_json(&summary, out.join("fixtures.json"))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halo_surrounds_zone() {
        let m = handle_mask(40, 40, BBox::new(10, 10, 5, 5));
        assert_eq!(m.get(10, 10), 255);
        assert_eq!(m.get(14, 14), 255);
        assert_eq!(m.get(7, 10), 96);
        assert_eq!(m.get(17, 17), 96);
        assert_eq!(m.get(6, 10), 0);
        assert_eq!(m.get(18, 12), 0);
    }

    #[test]
    fn sprites_avoid_skin_tones() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for base in SPRITE_PALETTE {
            let s = sprite(&mut rng, 30, 30, base);
            for y in 0..30 {
                for x in 0..30 {
                    assert!(!is_skin(s.rgb(x, y)));
                }
            }
        }
        assert!(is_skin(HAND_RGB));
    }

    #[test]
    fn contact_frames_put_hand_on_zone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spr = sprite(&mut rng, 60, 50, SPRITE_PALETTE[0]);
        let zone = BBox::new(5, 6, HANDLE_ZONE, HANDLE_ZONE);
        let v = render_video(&mut rng, &spr, zone, (1, -2));
        for (t, d) in v.detections.iter().enumerate() {
            let obj = d.object_bbox.unwrap();
            assert!(obj.fits_in(v.frames[t].size()));
            if d.in_contact {
                let hand = d.hand_bbox.unwrap();
                let z = BBox::new(obj.x + zone.x, obj.y + zone.y, HANDLE_ZONE, HANDLE_ZONE);
                assert_eq!(hand.intersect(&z), Some(hand));
            } else {
                assert!(d.is_unobstructed(), "frame {t}");
            }
        }
    }
}
