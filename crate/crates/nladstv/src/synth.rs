//! Synthetic oriented test images.
//!
//! Small deterministic generators used by the examples and the test suite:
//! sinusoidal stripe patterns with a prescribed orientation (ground truth
//! for direction estimation) and richer band-limited textures whose coarse
//! structure survives heavy blurring.

use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

use crate::image::ImageField;

/// Sinusoidal stripes: intensity `0.5 + amplitude * sin(2 pi u / period)`
/// where `u` is the coordinate across the stripe direction, so lines of
/// constant intensity run along `angle` (radians, image convention: x right,
/// y down, angles measured toward increasing y). `angle = 0` gives rows of
/// constant intensity.
pub fn stripes(width: usize, height: usize, angle: f64, period: f64, amplitude: f64) -> ImageField {
    assert!(period > 0.0, "stripe period must be positive");
    let (s, c) = angle.sin_cos();
    let mut img = ImageField::new(width, height, 1);
    for y in 0..height {
        for x in 0..width {
            let u = -(x as f64) * s + (y as f64) * c;
            let v = 0.5 + amplitude * (2.0 * std::f64::consts::PI * u / period).sin();
            img.set(x, y, 0, v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Band-limited oriented texture: a sum of three random-phase sinusoids in
/// the across-stripe coordinate, with periods `min_period`, `1.5 *
/// min_period` and `2.25 * min_period`. Deterministic in `seed`; values lie
/// in `[0, 1]`.
pub fn oriented_texture(
    width: usize,
    height: usize,
    angle: f64,
    min_period: f64,
    seed: u64,
) -> ImageField {
    assert!(min_period > 0.0, "texture period must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let harmonics: Vec<(f64, f64, f64)> = [1.0, 1.5, 2.25]
        .iter()
        .map(|&scale| {
            (
                min_period * scale,
                rng.gen_range(0.1..0.2),
                rng.gen_range(0.0..2.0 * std::f64::consts::PI),
            )
        })
        .collect();
    let (s, c) = angle.sin_cos();
    let mut img = ImageField::new(width, height, 1);
    for y in 0..height {
        for x in 0..width {
            let u = -(x as f64) * s + (y as f64) * c;
            let mut v = 0.5;
            for &(period, amp, phase) in &harmonics {
                v += amp * (2.0 * std::f64::consts::PI * u / period + phase).sin();
            }
            img.set(x, y, 0, v.clamp(0.0, 1.0));
        }
    }
    img
}

/// Four stripe quadrants at 0, 30, 75 and 120 degrees (clockwise from the
/// top-left), sharing one period and amplitude — a compact scene with mixed
/// orientations.
pub fn quadrant_stripes(width: usize, height: usize, period: f64, amplitude: f64) -> ImageField {
    let angles = [0.0, 30.0, 120.0, 75.0].map(|d: f64| d.to_radians());
    let quads: Vec<ImageField> = angles
        .iter()
        .map(|&a| stripes(width, height, a, period, amplitude))
        .collect();
    let (hw, hh) = (width / 2, height / 2);
    let mut img = ImageField::new(width, height, 1);
    for y in 0..height {
        for x in 0..width {
            let q = match (x >= hw, y >= hh) {
                (false, false) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (true, true) => 3,
            };
            img.set(x, y, 0, quads[q].get(x, y, 0));
        }
    }
    img
}
