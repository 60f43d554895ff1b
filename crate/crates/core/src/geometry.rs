//! Small pixel-space primitives shared by every stage.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// A point in pixel coordinates. Integer pixel centres sit on whole numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Nearest pixel index, or `None` when the point rounds outside `size`.
    pub fn pixel(&self, size: ImageSize) -> Option<(u32, u32)> {
        let x = self.x.round();
        let y = self.y.round();
        if x < 0.0 || y < 0.0 || x >= size.width as f64 || y >= size.height as f64 {
            return None;
        }
        Some((x as u32, y as u32))
    }

    pub fn rounded(&self) -> Point2 {
        Point2::new(self.x.round(), self.y.round())
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(v: [f64; 2]) -> Self {
        Point2::new(v[0], v[1])
    }
}

impl From<Point2> for [f64; 2] {
    fn from(p: Point2) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub const fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn diagonal(&self) -> f64 {
        (self.width as f64).hypot(self.height as f64)
    }

    pub fn contains(&self, p: &Point2) -> bool {
        p.pixel(*self).is_some()
    }

    pub fn clamp(&self, p: Point2) -> Point2 {
        Point2::new(
            p.x.clamp(0.0, self.width.saturating_sub(1) as f64),
            p.y.clamp(0.0, self.height.saturating_sub(1) as f64),
        )
    }
}

/// Axis-aligned pixel rectangle, serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[u32; 4]", into = "[u32; 4]")]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn is_empty(&self) -> bool {
        self.w == 0 || self.h == 0
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn intersect(&self, other: &BBox) -> Option<BBox> {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox::new(x0, y0, x1 - x0, y1 - y0))
    }

    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        x >= self.x && x < self.right() && y >= self.y && y < self.bottom()
    }

    pub fn fits_in(&self, size: ImageSize) -> bool {
        self.right() <= size.width && self.bottom() <= size.height
    }
}

impl From<[u32; 4]> for BBox {
    fn from(v: [u32; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

/// Arithmetic mean of a non-empty point list.
pub fn centroid(points: &[Point2]) -> Option<Point2> {
    if points.is_empty() {
        return None;
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Some(Point2::new(sx / n, sy / n))
}

/// Integer offsets `(dx, dy)` with `dx² + dy² <= radius²`, in raster order.
pub fn disk_offsets(radius: f64) -> Vec<(i64, i64)> {
    let r = radius.max(0.0);
    let ri = r.floor() as i64;
    let r2 = r * r;
    let mut out = Vec::new();
    for dy in -ri..=ri {
        for dx in -ri..=ri {
            if ((dx * dx + dy * dy) as f64) <= r2 {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Draws `count` pixels uniformly from the lattice disk around `center`
/// (rounded to the nearest pixel), clamping each draw into `bounds`.
pub fn resample_disk<R: Rng + ?Sized>(
    center: Point2,
    radius: f64,
    count: usize,
    bounds: ImageSize,
    rng: &mut R,
) -> Vec<Point2> {
    let c = bounds.clamp(center.rounded());
    let offsets = disk_offsets(radius);
    (0..count)
        .map(|_| {
            let (dx, dy) = offsets[rng.random_range(0..offsets.len())];
            bounds.clamp(Point2::new(c.x + dx as f64, c.y + dy as f64))
        })
        .collect()
}
