//! Harris corners matched by normalized cross-correlation with a mutual-best
//! filter. Used when no external correspondences are supplied.

use crate::geometry::{BBox, Point2};
use crate::io::RasterImage;

#[derive(Debug, Clone)]
pub struct MatcherConfig {
    pub harris_k: f64,
    pub max_corners: usize,
    /// Odd patch side length for NCC.
    pub patch_size: u32,
    /// Corners weaker than this fraction of the strongest response are ignored.
    pub quality_level: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            harris_k: 0.04,
            max_corners: 200,
            patch_size: 11,
            quality_level: 0.01,
        }
    }
}

struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub x: u32,
    pub y: u32,
    pub response: f64,
}

/// Harris response with Sobel gradients and a 5×5 box window, 3×3 non-maximum
/// suppression, strongest `max_corners` kept. Corners closer than half a
/// patch to the border are skipped so every corner has a full patch.
pub fn harris_corners(img: &RasterImage, roi: Option<BBox>, cfg: &MatcherConfig) -> Vec<Corner> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Vec::new();
    }
    let gray = Plane {
        w,
        h,
        v: img.gray_plane(),
    };
    let mut ixx = vec![0.0; w * h];
    let mut iyy = vec![0.0; w * h];
    let mut ixy = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (gray.at(x + 1, y - 1) + 2.0 * gray.at(x + 1, y) + gray.at(x + 1, y + 1))
                - (gray.at(x - 1, y - 1) + 2.0 * gray.at(x - 1, y) + gray.at(x - 1, y + 1));
            let gy = (gray.at(x - 1, y + 1) + 2.0 * gray.at(x, y + 1) + gray.at(x + 1, y + 1))
                - (gray.at(x - 1, y - 1) + 2.0 * gray.at(x, y - 1) + gray.at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let sxx = Plane { w, h, v: ixx };
    let syy = Plane { w, h, v: iyy };
    let sxy = Plane { w, h, v: ixy };
    let mut response = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for dy in -2..=2 {
                for dx in -2..=2 {
                    a += sxx.at(x + dx, y + dy);
                    b += syy.at(x + dx, y + dy);
                    c += sxy.at(x + dx, y + dy);
                }
            }
            let det = a * b - c * c;
            let tr = a + b;
            response[y as usize * w + x as usize] = det - cfg.harris_k * tr * tr;
        }
    }

    let margin = (cfg.patch_size / 2 + 1) as usize;
    let max_r = response.iter().copied().fold(0.0, f64::max);
    if max_r <= 0.0 || w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let floor = cfg.quality_level * max_r;
    let mut corners = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            if let Some(r) = roi {
                if !r.contains_pixel(x as u32, y as u32) {
                    continue;
                }
            }
            let r = response[y * w + x];
            if r <= floor {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = response[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
                    // earlier raster neighbours win ties
                    let earlier = dy < 0 || (dy == 0 && dx < 0);
                    if n > r || (earlier && n == r) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push(Corner {
                    x: x as u32,
                    y: y as u32,
                    response: r,
                });
            }
        }
    }
    corners.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then((a.y, a.x).cmp(&(b.y, b.x)))
    });
    corners.truncate(cfg.max_corners);
    corners
}

/// Zero-mean, unit-norm patch; `None` for flat patches.
fn patch(img: &RasterImage, c: &Corner, size: u32) -> Option<Vec<f64>> {
    let half = (size / 2) as i64;
    let mut v = Vec::with_capacity((size * size) as usize);
    for dy in -half..=half {
        for dx in -half..=half {
            v.push(img.luma((c.x as i64 + dx) as u32, (c.y as i64 + dy) as u32));
        }
    }
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Some(v)
}

fn ncc(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mutual-best NCC matches between Harris corners of two images, as
/// `(src, dst)` pixel pairs ordered by source corner strength.
pub fn match_corners(
    src: &RasterImage,
    dst: &RasterImage,
    src_roi: Option<BBox>,
    dst_roi: Option<BBox>,
    cfg: &MatcherConfig,
) -> Vec<(Point2, Point2)> {
    let with_patches = |img: &RasterImage, roi| -> Vec<(Corner, Vec<f64>)> {
        harris_corners(img, roi, cfg)
            .into_iter()
            .filter_map(|c| patch(img, &c, cfg.patch_size).map(|p| (c, p)))
            .collect()
    };
    let a = with_patches(src, src_roi);
    let b = with_patches(dst, dst_roi);
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let scores: Vec<Vec<f64>> = a
        .iter()
        .map(|(_, pa)| b.iter().map(|(_, pb)| ncc(pa, pb)).collect())
        .collect();
    let argmax = |it: &mut dyn Iterator<Item = (usize, f64)>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in it {
            if best.is_none_or(|(_, bs)| s > bs) {
                best = Some((i, s));
            }
        }
        best.map(|b| b.0)
    };
    let best_b: Vec<Option<usize>> = scores
        .iter()
        .map(|row| argmax(&mut row.iter().copied().enumerate()))
        .collect();
    let best_a: Vec<Option<usize>> = (0..b.len())
        .map(|j| argmax(&mut scores.iter().map(|row| row[j]).enumerate()))
        .collect();
    let mut out = Vec::new();
    for (i, bj) in best_b.iter().enumerate() {
        if let Some(j) = *bj {
            if best_a[j] == Some(i) && scores[i][j] > 0.0 {
                let (ca, cb) = (&a[i].0, &b[j].0);
                out.push((
                    Point2::new(ca.x as f64, ca.y as f64),
                    Point2::new(cb.x as f64, cb.y as f64),
                ));
            }
        }
    }
    out
}
