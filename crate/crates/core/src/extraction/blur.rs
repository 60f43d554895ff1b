use super::ExtractionError;
use crate::io::RasterImage;

/// Variance of the 4-neighbour Laplacian response over the luma plane.
/// Borders reflect without repeating the edge sample (`dcb|abcd|cba`), so a
/// constant image scores exactly zero. Higher means sharper.
pub fn laplacian_blur_score(img: &RasterImage) -> Result<f64, ExtractionError> {
    if img.is_empty() {
        return Err(ExtractionError::EmptyImage);
    }
    let (w, h) = (img.width() as usize, img.height() as usize);
    let g = img.gray_plane();
    let at = |x: isize, y: isize| -> f64 { g[reflect(y, h) * w + reflect(x, w)] };
    let n = (w * h) as f64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let r = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
            sum += r;
            sum_sq += r * r;
        }
    }
    let mean = sum / n;
    Ok((sum_sq / n - mean * mean).max(0.0))
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * n - 2 - i
    } else {
        i
    };
    r.clamp(0, n - 1) as usize
}

/// 3×3 mean filter with edge clamping, rounded back to 8 bits.
pub fn box_blur3(img: &RasterImage) -> RasterImage {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let c = img.channels();
    let mut data = Vec::with_capacity(img.data().len());
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0u32;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let xx = (x + dx).clamp(0, w - 1) as u32;
                        let yy = (y + dy).clamp(0, h - 1) as u32;
                        s += img.sample(xx, yy, ch) as u32;
                    }
                }
                data.push(((s as f64) / 9.0).round() as u8);
            }
        }
    }
    RasterImage::new(img.width(), img.height(), c, data).expect("same geometry")
}
