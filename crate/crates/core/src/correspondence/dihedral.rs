use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geometry::{ImageSize, Point2};
use crate::io::RasterImage;

/// The eight symmetries of the pixel grid.
///
/// `R*` rotate clockwise by the given angle. `F*` first mirror horizontally
/// (`x → w-1-x`) and then rotate. For a `w × h` image:
///
/// | code  | `(x, y) →`              | output size |
/// |-------|-------------------------|-------------|
/// | r0    | `(x, y)`                | `w × h`     |
/// | r90   | `(h-1-y, x)`            | `h × w`     |
/// | r180  | `(w-1-x, h-1-y)`        | `w × h`     |
/// | r270  | `(y, w-1-x)`            | `h × w`     |
/// | f0    | `(w-1-x, y)`            | `w × h`     |
/// | f90   | `(h-1-y, w-1-x)`        | `h × w`     |
/// | f180  | `(x, h-1-y)`            | `w × h`     |
/// | f270  | `(y, x)`                | `h × w`     |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dihedral {
    R0,
    R90,
    R180,
    R270,
    F0,
    F90,
    F180,
    F270,
}

impl Dihedral {
    /// Search order; earlier entries win similarity ties.
    pub const ALL: [Dihedral; 8] = [
        Dihedral::R0,
        Dihedral::R90,
        Dihedral::R180,
        Dihedral::R270,
        Dihedral::F0,
        Dihedral::F90,
        Dihedral::F180,
        Dihedral::F270,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            Dihedral::R0 => "r0",
            Dihedral::R90 => "r90",
            Dihedral::R180 => "r180",
            Dihedral::R270 => "r270",
            Dihedral::F0 => "f0",
            Dihedral::F90 => "f90",
            Dihedral::F180 => "f180",
            Dihedral::F270 => "f270",
        }
    }

    fn quarter_turns(&self) -> u8 {
        match self {
            Dihedral::R0 | Dihedral::F0 => 0,
            Dihedral::R90 | Dihedral::F90 => 1,
            Dihedral::R180 | Dihedral::F180 => 2,
            Dihedral::R270 | Dihedral::F270 => 3,
        }
    }

    fn flipped(&self) -> bool {
        matches!(
            self,
            Dihedral::F0 | Dihedral::F90 | Dihedral::F180 | Dihedral::F270
        )
    }

    pub fn swaps_axes(&self) -> bool {
        self.quarter_turns() % 2 == 1
    }

    pub fn output_size(&self, size: ImageSize) -> ImageSize {
        if self.swaps_axes() {
            ImageSize::new(size.height, size.width)
        } else {
            size
        }
    }

    /// The transform undoing `self`.
    pub fn inverse(&self) -> Dihedral {
        match self {
            Dihedral::R90 => Dihedral::R270,
            Dihedral::R270 => Dihedral::R90,
            // reflections and the half turn are involutions
            other => *other,
        }
    }

    /// Maps a point of a `size` image into the transformed image.
    pub fn map_point(&self, p: Point2, size: ImageSize) -> Point2 {
        let (w, h) = (size.width as f64, size.height as f64);
        let (mut x, y) = (p.x, p.y);
        if self.flipped() {
            x = w - 1.0 - x;
        }
        match self.quarter_turns() {
            0 => Point2::new(x, y),
            1 => Point2::new(h - 1.0 - y, x),
            2 => Point2::new(w - 1.0 - x, h - 1.0 - y),
            _ => Point2::new(y, w - 1.0 - x),
        }
    }

    /// Inverse of [`map_point`](Self::map_point): `size` is the size of the
    /// original (untransformed) image.
    pub fn unmap_point(&self, p: Point2, size: ImageSize) -> Point2 {
        self.inverse().map_point(p, self.output_size(size))
    }

    pub fn apply(&self, img: &RasterImage) -> RasterImage {
        let size = img.size();
        let out = self.output_size(size);
        let c = img.channels() as usize;
        let mut data = vec![0u8; img.data().len()];
        for y in 0..size.height {
            for x in 0..size.width {
                let q = self.map_point(Point2::new(x as f64, y as f64), size);
                let (qx, qy) = (q.x as usize, q.y as usize);
                let dst = (qy * out.width as usize + qx) * c;
                let src = (y as usize * size.width as usize + x as usize) * c;
                data[dst..dst + c].copy_from_slice(&img.data()[src..src + c]);
            }
        }
        RasterImage::new(out.width, out.height, img.channels(), data).expect("same sample count")
    }
}

impl fmt::Display for Dihedral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Dihedral {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dihedral::ALL
            .iter()
            .copied()
            .find(|t| t.code() == s)
            .ok_or_else(|| format!("unknown transform code {s:?}"))
    }
}
