//! Synthetic frames with known motion.

use orchardseg::raster::Image;
use orchardseg::texture::value_noise;

/// Smooth multi-octave color noise sampled at `(x - dx, y - dy)`, so the
/// content of the offset image moves by `(dx, dy)` pixels without wrapping.
pub fn noise_image(w: usize, h: usize, dx: f64, dy: f64, seed: u64) -> Image<f64> {
    Image::from_fn(w, h, |x, y| {
        let (px, py) = (x as f64 - dx, y as f64 - dy);
        [0u64, 1, 2].map(|c| {
            let s = seed.wrapping_add(c * 7919);
            0.5 * value_noise(px / 6.0, py / 6.0, s)
                + 0.3 * value_noise(px / 3.0, py / 3.0, s ^ 1)
                + 0.2 * value_noise(px / 1.5, py / 1.5, s ^ 2)
        })
    })
}
