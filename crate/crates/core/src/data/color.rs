use super::image::{ImageU8, Plane};
use crate::tensor::Real;

/// BT.601 studio-swing luma of 8-bit RGB:
/// `Y = 16 + (65.481·R + 128.553·G + 24.966·B) / 255`, in `[16, 235]`.
pub fn rgb_to_y(img: &ImageU8) -> Plane {
    let data = img
        .pixels()
        .chunks_exact(3)
        .map(|p| {
            16.0 + (65.481 * p[0] as Real + 128.553 * p[1] as Real + 24.966 * p[2] as Real) / 255.0
        })
        .collect();
    Plane::new(img.height(), img.width(), data).expect("pixel count matches")
}

/// `floor(v + 0.5)` clamped to `[0, 255]`.
pub fn quantize_round_half_up(v: Real) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}
