use crate::io::{GroundTruthMask, RasterImage};

/// Threshold skin detector in full-range BT.601 YCbCr:
/// `Cr ∈ [133, 173]` and `Cb ∈ [77, 127]` map to 255, everything else to 0.
pub fn skin_mask_from_rgb(img: &RasterImage) -> GroundTruthMask {
    GroundTruthMask::from_fn(img.width(), img.height(), |x, y| {
        if is_skin(img.rgb(x, y)) {
            255
        } else {
            0
        }
    })
}

pub fn is_skin(rgb: [u8; 3]) -> bool {
    let (r, g, b) = (rgb[0] as f64, rgb[1] as f64, rgb[2] as f64);
    let cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
    let cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
    (133.0..=173.0).contains(&cr) && (77.0..=127.0).contains(&cb)
}
