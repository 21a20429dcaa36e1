//! Inputs shared by the benchmarks.

use dic_core::Image;

/// Deterministic textured test image.
pub fn texture(height: usize, width: usize) -> Image {
    Image::from_fn(height, width, |c, y, x| {
        let (xf, yf) = (x as f64, y as f64);
        0.5 + 0.25 * ((0.11 * xf + c as f64).sin() * (0.07 * yf).cos()) + 0.2 * ((0.9 * xf + 1.3 * yf).sin() * 0.5)
    })
}
