use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CorrespondenceError, Dihedral};
use crate::geometry::{ImageSize, Point2};
use crate::io::{read_json, read_tensor, write_json, write_tensor, RasterImage, Tensor};

/// Channel-major `[C, grid_h, grid_w]` descriptors describing an
/// `image_w × image_h` image.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseFeatureMap {
    channels: usize,
    grid_h: usize,
    grid_w: usize,
    image: ImageSize,
    data: Vec<f32>,
    cell_sq_norms: Vec<f64>,
}

impl DenseFeatureMap {
    pub fn new(
        channels: usize,
        grid_h: usize,
        grid_w: usize,
        image: ImageSize,
        data: Vec<f32>,
    ) -> Result<Self, CorrespondenceError> {
        let bad = |m: String| Err(CorrespondenceError::InvalidFeatureMap(m));
        if channels == 0 || grid_h == 0 || grid_w == 0 {
            return bad(format!("empty grid {channels}x{grid_h}x{grid_w}"));
        }
        if (image.height as usize) < grid_h || (image.width as usize) < grid_w {
            return bad(format!(
                "grid {grid_w}x{grid_h} finer than image {}x{}",
                image.width, image.height
            ));
        }
        if data.len() != channels * grid_h * grid_w {
            return bad(format!("{} values for shape [{channels},{grid_h},{grid_w}]", data.len()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return bad("non-finite feature value".into());
        }
        let cells = grid_h * grid_w;
        let mut sq = vec![0.0f64; cells];
        for c in 0..channels {
            for (i, &v) in data[c * cells..(c + 1) * cells].iter().enumerate() {
                sq[i] += v as f64 * v as f64;
            }
        }
        Ok(Self {
            channels,
            grid_h,
            grid_w,
            image,
            data,
            cell_sq_norms: sq,
        })
    }

    pub fn from_tensor(t: Tensor, image: ImageSize) -> Result<Self, CorrespondenceError> {
        let shape = t.shape().to_vec();
        let [c, h, w] = shape[..] else {
            return Err(CorrespondenceError::InvalidFeatureMap(format!(
                "expected [C,H,W], got {shape:?}"
            )));
        };
        Self::new(c, h, w, image, t.into_data())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.grid_h, self.grid_w],
            self.data.clone(),
        )
        .expect("validated at construction")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn image_size(&self) -> ImageSize {
        self.image
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn cell_sq_norms(&self) -> &[f64] {
        &self.cell_sq_norms
    }

    pub fn cell(&self, gx: usize, gy: usize) -> Vec<f32> {
        let cells = self.grid_h * self.grid_w;
        let i = gy * self.grid_w + gx;
        (0..self.channels).map(|c| self.data[c * cells + i]).collect()
    }

    /// Continuous grid coordinate of a pixel position along one axis.
    fn to_grid(p: f64, image: u32, grid: usize) -> f64 {
        ((p + 0.5) * grid as f64 / image as f64 - 0.5).clamp(0.0, grid as f64 - 1.0)
    }

    /// Pixel coordinates of a cell centre.
    pub fn cell_center(&self, gx: usize, gy: usize) -> Point2 {
        Point2::new(
            (gx as f64 + 0.5) * self.image.width as f64 / self.grid_w as f64 - 0.5,
            (gy as f64 + 0.5) * self.image.height as f64 / self.grid_h as f64 - 0.5,
        )
    }

    /// Bilinearly interpolated descriptor at a pixel position.
    pub fn feature_at(&self, p: Point2) -> Result<Vec<f32>, CorrespondenceError> {
        if !self.image.contains(&p) {
            return Err(CorrespondenceError::OutOfBounds(p));
        }
        let gx = Self::to_grid(p.x, self.image.width, self.grid_w);
        let gy = Self::to_grid(p.y, self.image.height, self.grid_h);
        let (x0, y0) = (gx.floor() as usize, gy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.grid_w - 1), (y0 + 1).min(self.grid_h - 1));
        let (fx, fy) = (gx - x0 as f64, gy - y0 as f64);
        let cells = self.grid_h * self.grid_w;
        let at = |c: usize, x: usize, y: usize| self.data[c * cells + y * self.grid_w + x] as f64;
        Ok((0..self.channels)
            .map(|c| {
                let top = at(c, x0, y0) * (1.0 - fx) + at(c, x1, y0) * fx;
                let bot = at(c, x0, y1) * (1.0 - fx) + at(c, x1, y1) * fx;
                (top * (1.0 - fy) + bot * fy) as f32
            })
            .collect())
    }
}

/// Produces the feature map of `img` after applying `transform` to it.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn extract(
        &self,
        img: &RasterImage,
        transform: Dihedral,
    ) -> Result<DenseFeatureMap, CorrespondenceError>;
}

/// Deterministic stride-1 descriptor from local colour statistics.
///
/// For every pixel and colour channel, the mean intensity (scaled to
/// `[0, 1]`, zero outside the image) over rings of integer offsets grouped
/// by squared radius, plus one constant channel. Rings are unions of
/// dihedral orbits, so `extract(T(img)) == T(extract(img))` exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct ToyGridExtractor;

pub const TOYGRID_NAME: &str = "toygrid";
/// Upper bounds (inclusive) on squared offset radius for each ring.
const RING_EDGES: [i64; 6] = [0, 2, 5, 10, 18, 32];

impl ToyGridExtractor {
    pub const CHANNELS: usize = 3 * RING_EDGES.len() + 1;

    fn rings() -> Vec<Vec<(i64, i64)>> {
        let r = (*RING_EDGES.last().unwrap() as f64).sqrt().floor() as i64;
        let mut rings = vec![Vec::new(); RING_EDGES.len()];
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = dx * dx + dy * dy;
                if let Some(k) = RING_EDGES.iter().position(|&e| d2 <= e) {
                    rings[k].push((dx, dy));
                }
            }
        }
        rings
    }

    pub fn features(img: &RasterImage) -> Result<DenseFeatureMap, CorrespondenceError> {
        if img.is_empty() {
            return Err(CorrespondenceError::EmptyImage);
        }
        let (w, h) = (img.width() as i64, img.height() as i64);
        let cells = (w * h) as usize;
        let rings = Self::rings();
        let mut data = vec![0.0f32; Self::CHANNELS * cells];
        for y in 0..h {
            for x in 0..w {
                let i = (y * w + x) as usize;
                for (k, ring) in rings.iter().enumerate() {
                    let mut s = [0.0f64; 3];
                    for &(dx, dy) in ring {
                        let (xx, yy) = (x + dx, y + dy);
                        if xx >= 0 && yy >= 0 && xx < w && yy < h {
                            let px = img.rgb(xx as u32, yy as u32);
                            for c in 0..3 {
                                s[c] += px[c] as f64;
                            }
                        }
                    }
                    let n = ring.len() as f64 * 255.0;
                    for c in 0..3 {
                        data[(c * RING_EDGES.len() + k) * cells + i] = (s[c] / n) as f32;
                    }
                }
                data[(Self::CHANNELS - 1) * cells + i] = 1.0;
            }
        }
        DenseFeatureMap::new(Self::CHANNELS, h as usize, w as usize, img.size(), data)
    }
}

impl FeatureExtractor for ToyGridExtractor {
    fn name(&self) -> &str {
        TOYGRID_NAME
    }

    fn extract(
        &self,
        img: &RasterImage,
        transform: Dihedral,
    ) -> Result<DenseFeatureMap, CorrespondenceError> {
        Self::features(&transform.apply(img))
    }
}

/// Sidecar written next to every exported feature map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSidecar {
    pub image_h: u32,
    pub image_w: u32,
    pub extractor: String,
}

/// Precomputed maps stored as `<dir>/<image-digest>.<transform>.rft` with a
/// `<image-digest>.<transform>.json` sidecar. The digest is that of the
/// untransformed image.
#[derive(Debug, Clone)]
pub struct FileFeatureExtractor {
    pub dir: PathBuf,
}

impl FileFeatureExtractor {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn paths(&self, img: &RasterImage, t: Dihedral) -> (PathBuf, PathBuf) {
        let stem = format!("{}.{}", img.digest(), t.code());
        (
            self.dir.join(format!("{stem}.rft")),
            self.dir.join(format!("{stem}.json")),
        )
    }

    /// Writes `fm` where [`extract`](FeatureExtractor::extract) will find it.
    pub fn store(
        &self,
        img: &RasterImage,
        t: Dihedral,
        fm: &DenseFeatureMap,
        extractor: &str,
    ) -> Result<(), CorrespondenceError> {
        let (rft, json) = self.paths(img, t);
        write_tensor(&fm.to_tensor(), &rft)?;
        write_json(
            &FeatureSidecar {
                image_h: fm.image_size().height,
                image_w: fm.image_size().width,
                extractor: extractor.to_string(),
            },
            &json,
        )?;
        Ok(())
    }
}

fn load_map(rft: &Path, json: &Path) -> Result<DenseFeatureMap, CorrespondenceError> {
    if !rft.is_file() || !json.is_file() {
        return Err(CorrespondenceError::MissingFeatureFile(
            rft.display().to_string(),
        ));
    }
    let side: FeatureSidecar = read_json(json)?;
    DenseFeatureMap::from_tensor(read_tensor(rft)?, ImageSize::new(side.image_w, side.image_h))
}

impl FeatureExtractor for FileFeatureExtractor {
    fn name(&self) -> &str {
        "file"
    }

    fn extract(
        &self,
        img: &RasterImage,
        transform: Dihedral,
    ) -> Result<DenseFeatureMap, CorrespondenceError> {
        let (rft, json) = self.paths(img, transform);
        let fm = load_map(&rft, &json)?;
        let expect = transform.output_size(img.size());
        if fm.image_size() != expect {
            return Err(CorrespondenceError::InvalidFeatureMap(format!(
                "{} describes {:?}, expected {:?}",
                rft.display(),
                fm.image_size(),
                expect
            )));
        }
        Ok(fm)
    }
}
