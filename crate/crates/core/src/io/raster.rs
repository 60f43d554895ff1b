//! 8-bit images, ground-truth masks and 16-bit depth maps, with PNG I/O.

use std::path::Path;

use image::{ColorType, DynamicImage, ExtendedColorType};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{BBox, ImageSize};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("expected {expected} channel(s), found {found}")]
    WrongChannelCount { expected: u8, found: u8 },
    #[error("expected 8-bit samples, found {0:?}")]
    WrongBitDepth(ColorType),
    #[error("buffer length {len} does not match {width}x{height}x{channels}")]
    BadBuffer {
        width: u32,
        height: u32,
        channels: u8,
        len: usize,
    },
    #[error("image is empty")]
    EmptyImage,
    #[error("crop {bbox:?} is empty or outside a {width}x{height} image")]
    BadCrop { bbox: BBox, width: u32, height: u32 },
    #[error("cannot decode {path}: {source}")]
    DecodeFailure {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("cannot encode {path}: {source}")]
    EncodeFailure {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Row-major interleaved 8-bit image with one (gray) or three (RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8, data: Vec<u8>) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::WrongChannelCount {
                expected: 3,
                found: channels,
            });
        }
        if data.len() != width as usize * height as usize * channels as usize {
            return Err(RasterError::BadBuffer {
                width,
                height,
                channels,
                len: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn gray_from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn rgb_from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn channels(&self) -> u8 {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels as usize
    }

    /// RGB triple at `(x, y)`; gray images replicate their single channel.
    pub fn rgb(&self, x: u32, y: u32) -> [u8; 3] {
        let i = self.offset(x, y);
        if self.channels == 1 {
            let v = self.data[i];
            [v, v, v]
        } else {
            [self.data[i], self.data[i + 1], self.data[i + 2]]
        }
    }

    pub fn put_rgb(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = self.offset(x, y);
        if self.channels == 1 {
            self.data[i] = luma(rgb).round().clamp(0.0, 255.0) as u8;
        } else {
            self.data[i..i + 3].copy_from_slice(&rgb);
        }
    }

    pub fn sample(&self, x: u32, y: u32, c: u8) -> u8 {
        self.data[self.offset(x, y) + c as usize]
    }

    /// ITU-R BT.601 luma, unrounded.
    pub fn luma(&self, x: u32, y: u32) -> f64 {
        if self.channels == 1 {
            self.data[self.offset(x, y)] as f64
        } else {
            luma(self.rgb(x, y))
        }
    }

    /// Row-major luma plane.
    pub fn gray_plane(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f64).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|c| luma([c[0], c[1], c[2]]))
                .collect(),
        }
    }

    pub fn to_rgb(&self) -> RasterImage {
        if self.channels == 3 {
            return self.clone();
        }
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 3,
            data: self.data.iter().flat_map(|&v| [v, v, v]).collect(),
        }
    }

    pub fn crop(&self, bbox: BBox) -> Result<RasterImage, RasterError> {
        if bbox.is_empty() || !bbox.fits_in(self.size()) {
            return Err(RasterError::BadCrop {
                bbox,
                width: self.width,
                height: self.height,
            });
        }
        let c = self.channels as usize;
        let mut data = Vec::with_capacity(bbox.w as usize * bbox.h as usize * c);
        for y in bbox.y..bbox.bottom() {
            let start = self.offset(bbox.x, y);
            data.extend_from_slice(&self.data[start..start + bbox.w as usize * c]);
        }
        Ok(RasterImage {
            width: bbox.w,
            height: bbox.h,
            channels: self.channels,
            data,
        })
    }

    /// Content digest used to key precomputed per-image artifacts.
    ///
    /// SHA-256 over `width: u32 LE | height: u32 LE | channels: u8 | samples`,
    /// lowercase hex.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.width.to_le_bytes());
        h.update(self.height.to_le_bytes());
        h.update([self.channels]);
        h.update(&self.data);
        hex::encode(h.finalize())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        let img = decode(path)?;
        Ok(match img {
            DynamicImage::ImageLuma8(b) => {
                let (w, h) = b.dimensions();
                RasterImage::new(w, h, 1, b.into_raw())?
            }
            DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
                let b = img.to_luma8();
                let (w, h) = b.dimensions();
                RasterImage::new(w, h, 1, b.into_raw())?
            }
            other => {
                let b = other.to_rgb8();
                let (w, h) = b.dimensions();
                RasterImage::new(w, h, 3, b.into_raw())?
            }
        })
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        let color = if self.channels == 1 {
            ExtendedColorType::L8
        } else {
            ExtendedColorType::Rgb8
        };
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width,
            self.height,
            color,
            image::ImageFormat::Png,
        )
        .map_err(|source| RasterError::EncodeFailure {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn luma(rgb: [u8; 3]) -> f64 {
    0.299 * rgb[0] as f64 + 0.587 * rgb[1] as f64 + 0.114 * rgb[2] as f64
}

fn decode(path: &Path) -> Result<DynamicImage, RasterError> {
    image::ImageReader::open(path)
        .map_err(|e| RasterError::DecodeFailure {
            path: path.display().to_string(),
            source: image::ImageError::IoError(e),
        })?
        .with_guessed_format()
        .map_err(|e| RasterError::DecodeFailure {
            path: path.display().to_string(),
            source: image::ImageError::IoError(e),
        })?
        .decode()
        .map_err(|source| RasterError::DecodeFailure {
            path: path.display().to_string(),
            source,
        })
}

/// 8-bit single-channel mask; values are used verbatim, never rescaled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruthMask {
    width: u32,
    height: u32,
    values: Vec<u8>,
}

impl GroundTruthMask {
    pub fn new(width: u32, height: u32, values: Vec<u8>) -> Result<Self, RasterError> {
        if values.len() != width as usize * height as usize {
            return Err(RasterError::BadBuffer {
                width,
                height,
                channels: 1,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> u8) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            values,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn size(&self) -> ImageSize {
        ImageSize::new(self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn max(&self) -> u8 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        load_mask(path)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.clone(),
        }
        .save_png(path)
    }

    pub fn as_image(&self) -> RasterImage {
        RasterImage {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.values.clone(),
        }
    }
}

impl From<&RasterImage> for GroundTruthMask {
    /// Takes the luma of each pixel (identity for gray images).
    fn from(img: &RasterImage) -> Self {
        let values = if img.channels == 1 {
            img.data.clone()
        } else {
            img.gray_plane()
                .into_iter()
                .map(|v| v.round().clamp(0.0, 255.0) as u8)
                .collect()
        };
        GroundTruthMask {
            width: img.width,
            height: img.height,
            values,
        }
    }
}

/// Loads an 8-bit grayscale PNG mask without altering any sample.
pub fn load_mask(path: impl AsRef<Path>) -> Result<GroundTruthMask, RasterError> {
    let path = path.as_ref();
    match decode(path)? {
        DynamicImage::ImageLuma8(b) => {
            let (w, h) = b.dimensions();
            GroundTruthMask::new(w, h, b.into_raw())
        }
        DynamicImage::ImageLuma16(_) => Err(RasterError::WrongBitDepth(ColorType::L16)),
        other => Err(RasterError::WrongChannelCount {
            expected: 1,
            found: other.color().channel_count(),
        }),
    }
}

/// Raw 16-bit depth map; multiply by `depth_scale` for metres.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: u32,
    height: u32,
    values: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: u32, height: u32, values: Vec<u16>) -> Result<Self, RasterError> {
        if values.len() != width as usize * height as usize {
            return Err(RasterError::BadBuffer {
                width,
                height,
                channels: 1,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn get(&self, x: u32, y: u32) -> u16 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let path = path.as_ref();
        match decode(path)? {
            DynamicImage::ImageLuma16(b) => {
                let (w, h) = b.dimensions();
                DepthImage::new(w, h, b.into_raw())
            }
            DynamicImage::ImageLuma8(b) => {
                let (w, h) = b.dimensions();
                DepthImage::new(w, h, b.into_raw().into_iter().map(u16::from).collect())
            }
            other => Err(RasterError::WrongChannelCount {
                expected: 1,
                found: other.color().channel_count(),
            }),
        }
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let path = path.as_ref();
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_ne_bytes()).collect();
        image::save_buffer_with_format(
            path,
            &bytes,
            self.width,
            self.height,
            ExtendedColorType::L16,
            image::ImageFormat::Png,
        )
        .map_err(|source| RasterError::EncodeFailure {
            path: path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_copies_rows() {
        let img = RasterImage::gray_from_fn(4, 3, |x, y| (y * 4 + x) as u8);
        let c = img.crop(BBox::new(1, 1, 2, 2)).unwrap();
        assert_eq!(c.data(), &[5, 6, 9, 10]);
        assert!(img.crop(BBox::new(3, 0, 2, 1)).is_err());
        assert!(img.crop(BBox::new(0, 0, 0, 1)).is_err());
    }

    #[test]
    fn luma_weights() {
        assert!((luma([255, 255, 255]) - 255.0).abs() < 1e-9);
        assert!((luma([100, 0, 0]) - 29.9).abs() < 1e-9);
    }

    #[test]
    fn digest_depends_on_shape() {
        let a = RasterImage::gray_from_fn(2, 1, |_, _| 0);
        let b = RasterImage::gray_from_fn(1, 2, |_, _| 0);
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
