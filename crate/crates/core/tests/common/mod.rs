//! Brute-force reference implementations shared by the integration tests
//! and the acceptance runner. They favour obviousness over speed.

#![allow(dead_code)]

use std::path::Path;

use afford::evaluation::{DatasetManifest, ManifestEntry, Prediction};
use afford::geometry::Point2;
use afford::grasp::{ContactPoint3D, GraspCandidate};
use afford::io::{GroundTruthMask, RasterImage};
use rand::Rng;

/// DTM by scanning every contour pixel for every point.
pub fn dtm_oracle(mask: &GroundTruthMask, points: &[Point2], threshold: u8) -> f64 {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let above = |x: i64, y: i64| {
        x >= 0 && y >= 0 && x < w && y < h && mask.get(x as u32, y as u32) > threshold
    };
    let mut contour = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if above(x, y)
                && (!above(x - 1, y) || !above(x + 1, y) || !above(x, y - 1) || !above(x, y + 1))
            {
                contour.push((x as f64, y as f64));
            }
        }
    }
    assert!(!contour.is_empty(), "oracle needs a non-empty region");
    let mut total = 0.0;
    for p in points {
        let (px, py) = (p.x.round(), p.y.round());
        if above(px as i64, py as i64) {
            continue;
        }
        total += contour
            .iter()
            .map(|&(cx, cy)| ((cx - px).powi(2) + (cy - py).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
    }
    total / points.len() as f64 / ((w * w + h * h) as f64).sqrt()
}

/// Row-major index of the first target cell whose cosine similarity to `q`
/// is within 1e-12 of the maximum; zero cells score 0.
pub fn argmax_cell_oracle(q: &[f32], channels: usize, cells: usize, tgt: &[f32]) -> usize {
    let qn: f64 = q.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    let scores: Vec<f64> = (0..cells)
        .map(|i| {
            let cell: Vec<f64> = (0..channels).map(|c| tgt[c * cells + i] as f64).collect();
            let cn: f64 = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot: f64 = cell.iter().zip(q).map(|(a, &b)| a * b as f64).sum();
            if cn == 0.0 { 0.0 } else { dot / (qn * cn) }
        })
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().position(|&s| s >= max - 1e-12).unwrap()
}

pub struct OracleRecord {
    pub id: String,
    pub category: String,
    pub embedding: Vec<f32>,
}

/// Gated top-k by naive cosine; ties ordered by id.
pub fn retrieve_oracle(
    records: &[OracleRecord],
    target: &[f32],
    category: &str,
    k: usize,
) -> Vec<String> {
    let gated = records.iter().any(|r| r.category == category);
    let cos = |a: &[f32], b: &[f32]| {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
        let na: f64 = a.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut scored: Vec<(f64, &str)> = records
        .iter()
        .filter(|r| !gated || r.category == category)
        .map(|r| (cos(target, &r.embedding), r.id.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

/// Exhaustive nearest-translation scan with the documented tie rule.
pub fn grasp_oracle(cands: &[GraspCandidate], p: &ContactPoint3D) -> usize {
    let dist = |g: &GraspCandidate| {
        (0..3)
            .map(|i| (g.translation[i] - p.xyz[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut best = 0;
    for i in 1..cands.len() {
        let (d, bd) = (dist(&cands[i]), dist(&cands[best]));
        let s = cands[i].score.unwrap_or(f64::NEG_INFINITY);
        let bs = cands[best].score.unwrap_or(f64::NEG_INFINITY);
        if d < bd || (d == bd && s > bs) {
            best = i;
        }
    }
    best
}

pub fn random_rgb(rng: &mut impl Rng, w: u32, h: u32) -> RasterImage {
    let data = (0..w * h * 3).map(|_| rng.random::<u8>()).collect();
    RasterImage::new(w, h, 3, data).unwrap()
}

/// Ten 8×8 masks made of four constant quadrants, with planted points.
pub struct PlantedImage {
    pub id: &'static str,
    pub quadrants: [u8; 4],
    pub points: &'static [usize],
    pub category: &'static str,
    pub seen: bool,
    /// Hand-computed from the quadrant values.
    pub sr: f64,
    pub nss: f64,
}

pub const PLANTED: [PlantedImage; 10] = [
    PlantedImage { id: "img0", quadrants: [255, 0, 0, 0], points: &[0, 0, 0, 0, 0], category: "cup", seen: true, sr: 1.0, nss: 1.0 },
    // values 200,100,50,0,200 → 2 of 5 above; 550 / 200 / 5
    PlantedImage { id: "img1", quadrants: [200, 100, 50, 0], points: &[0, 1, 2, 3, 0], category: "cup", seen: true, sr: 0.4, nss: 0.55 },
    // 122 is not above the threshold; (122 + 123) / 123 / 2
    PlantedImage { id: "img2", quadrants: [122, 123, 0, 0], points: &[0, 1], category: "cup", seen: true, sr: 0.5, nss: 245.0 / 246.0 },
    // 180 / 255 / 3
    PlantedImage { id: "img3", quadrants: [60, 60, 60, 255], points: &[0, 1, 2], category: "cup", seen: false, sr: 0.0, nss: 4.0 / 17.0 },
    PlantedImage { id: "img4", quadrants: [255, 255, 255, 255], points: &[0, 1, 2, 3, 0], category: "cup", seen: false, sr: 1.0, nss: 1.0 },
    // 130 only; (130 + 120 + 90) / 130 / 3
    PlantedImage { id: "img5", quadrants: [130, 120, 0, 90], points: &[0, 1, 3], category: "knife", seen: true, sr: 1.0 / 3.0, nss: 34.0 / 39.0 },
    // 300 / 240 / 4
    PlantedImage { id: "img6", quadrants: [10, 20, 30, 240], points: &[0, 1, 2, 3], category: "knife", seen: true, sr: 0.25, nss: 0.3125 },
    // values 128,128,64,32,255 → 3 of 5; 607 / 255 / 5
    PlantedImage { id: "img7", quadrants: [255, 128, 64, 32], points: &[1, 1, 2, 3, 0], category: "knife", seen: true, sr: 0.6, nss: 607.0 / 1275.0 },
    PlantedImage { id: "img8", quadrants: [123, 123, 123, 123], points: &[0], category: "knife", seen: false, sr: 1.0, nss: 1.0 },
    PlantedImage { id: "img9", quadrants: [255, 0, 255, 0], points: &[1, 3], category: "knife", seen: false, sr: 0.0, nss: 0.0 },
];

/// Hand-computed aggregates over [`PLANTED`] (SR in percent).
pub const PLANTED_OVERALL_SR: f64 = 100.0 * (1.0 + 0.4 + 0.5 + 0.0 + 1.0 + 1.0 / 3.0 + 0.25 + 0.6 + 1.0 + 0.0) / 10.0;
pub const PLANTED_CUP_SR: f64 = 58.0;
pub const PLANTED_KNIFE_SR: f64 = 100.0 * (1.0 / 3.0 + 0.25 + 0.6 + 1.0 + 0.0) / 5.0;

pub fn quadrant_pixel(q: usize) -> Point2 {
    [
        Point2::new(1.0, 2.0),
        Point2::new(6.0, 1.0),
        Point2::new(2.0, 6.0),
        Point2::new(5.0, 7.0),
    ][q]
}

pub fn planted_mask(img: &PlantedImage) -> GroundTruthMask {
    GroundTruthMask::from_fn(8, 8, |x, y| {
        img.quadrants[(x >= 4) as usize + 2 * (y >= 4) as usize]
    })
}

/// Writes masks, placeholder images and a manifest; returns the manifest
/// path and the planted predictions.
pub fn write_planted_dataset(dir: &Path) -> (std::path::PathBuf, Vec<Prediction>) {
    std::fs::create_dir_all(dir.join("masks")).unwrap();
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let mut manifest = DatasetManifest::default();
    let mut preds = Vec::new();
    for img in &PLANTED {
        planted_mask(img)
            .save_png(dir.join("masks").join(format!("{}.png", img.id)))
            .unwrap();
        RasterImage::filled(8, 8, [90, 90, 90])
            .save_png(dir.join("images").join(format!("{}.png", img.id)))
            .unwrap();
        manifest.entries.insert(
            img.id.to_string(),
            ManifestEntry {
                image: format!("images/{}.png", img.id).into(),
                mask: format!("masks/{}.png", img.id).into(),
                category: img.category.to_string(),
                seen: img.seen,
            },
        );
        preds.push(Prediction {
            image_id: img.id.to_string(),
            method: "planted".into(),
            points: img.points.iter().map(|&q| quadrant_pixel(q)).collect(),
        });
    }
    let path = dir.join("manifest.json");
    afford::io::write_json(&manifest, &path).unwrap();
    (path, preds)
}

pub const RAND_ENCODER: &str = "rand16";

/// Embedder for memories whose records all carry stored embeddings; it
/// refuses to embed anything itself.
pub struct StoredOnly;

impl afford::retrieval::Embedder for StoredOnly {
    fn name(&self) -> &str {
        RAND_ENCODER
    }

    fn embed(
        &self,
        _: &RasterImage,
    ) -> Result<afford::memory::EmbeddingVector, afford::retrieval::RetrievalError> {
        panic!("every record should already have an embedding")
    }
}

/// A memory of `n` tiny records over `categories`, each with a random
/// 16-dim embedding. Every fifth record copies an earlier embedding so ties
/// occur.
pub fn random_memory(
    rng: &mut impl Rng,
    root: &Path,
    n: usize,
    categories: &[&str],
) -> (afford::memory::AffordanceMemory, Vec<OracleRecord>) {
    use afford::memory::{AffordanceMemory, AffordanceRecord, EmbeddingVector, Provenance};
    let mut mem = AffordanceMemory::create(root).unwrap();
    let mut oracle: Vec<OracleRecord> = Vec::new();
    for i in 0..n {
        let category = categories[rng.random_range(0..categories.len())];
        let embedding: Vec<f32> = if i % 5 == 4 {
            oracle[rng.random_range(0..i)].embedding.clone()
        } else {
            (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect()
        };
        let id = format!("r{:03}", rng.random_range(0..1000) * 1000 + i);
        let rec = AffordanceRecord::new(
            id.clone(),
            category,
            RasterImage::filled(2, 2, [i as u8, 0, 0]),
            vec![Point2::new(0.0, 0.0)],
            Provenance {
                source_video: "v".into(),
                frame_index: 0,
            },
        )
        .unwrap()
        .with_embedding(EmbeddingVector::new(RAND_ENCODER, embedding.clone()).unwrap());
        mem.add(rec).unwrap();
        oracle.push(OracleRecord {
            id,
            category: category.to_string(),
            embedding,
        });
    }
    (mem, oracle)
}

pub fn random_rotation(rng: &mut impl Rng) -> nalgebra::Rotation3<f64> {
    let axis = nalgebra::Unit::new_normalize(nalgebra::Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(0.05..1.0),
    ));
    nalgebra::Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1))
}

pub fn rows(m: &nalgebra::Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

/// `n` candidates; roughly one in six duplicates an earlier translation
/// with a different (or absent) score, so tie-breaking gets exercised.
pub fn random_candidates(rng: &mut impl Rng, n: usize) -> Vec<GraspCandidate> {
    let mut out: Vec<GraspCandidate> = Vec::with_capacity(n);
    for i in 0..n {
        let translation = if i > 0 && rng.random_range(0..6) == 0 {
            out[rng.random_range(0..i)].translation
        } else {
            [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(0.2..1.5),
            ]
        };
        let score = match rng.random_range(0..4) {
            0 => None,
            _ => Some(rng.random_range(0..5) as f64 / 4.0),
        };
        out.push(GraspCandidate::new(
            rows(random_rotation(rng).matrix()),
            translation,
            rng.random_range(0.0..0.1),
            score,
        ));
    }
    out
}

/// Applies `x ↦ R x + t` to the contact point and to every candidate pose.
pub fn rigidly_moved(
    cands: &[GraspCandidate],
    p: &ContactPoint3D,
    r: &nalgebra::Rotation3<f64>,
    t: nalgebra::Vector3<f64>,
) -> (Vec<GraspCandidate>, ContactPoint3D) {
    let mv = |v: nalgebra::Vector3<f64>| {
        let w = r * v + t;
        [w.x, w.y, w.z]
    };
    let moved = cands
        .iter()
        .map(|g| {
            GraspCandidate::new(
                rows(&(r.matrix() * g.rotation_matrix())),
                mv(g.translation_vector()),
                g.width,
                g.score,
            )
        })
        .collect();
    let q = mv(p.vector());
    (moved, ContactPoint3D::new(q[0], q[1], q[2]))
}
