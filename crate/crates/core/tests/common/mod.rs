//! Helpers shared by the integration tests: a direct-summation DFT and
//! seeded random images.
#![allow(dead_code)]

use std::f64::consts::PI;

use phaselux::spectral::Complex64;
use phaselux::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `Σ_x Σ_y f(x, y) e^{∓2πi(ux/H + vy/W)}`, scaled by `1/(HW)` when inverse.
pub fn direct_dft(plane: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in 0..h {
                for y in 0..w {
                    // reduce the exponent modulo the period before taking the angle
                    let turns = ((u * x) % h) as f64 / h as f64 + ((v * y) % w) as f64 / w as f64;
                    acc += plane[x * w + y] * Complex64::from_polar(1.0, sign * 2.0 * PI * turns);
                }
            }
            out[u * w + v] = acc * scale;
        }
    }
    out
}

pub fn real_plane(img: &ImageTensor, c: usize) -> Vec<Complex64> {
    img.plane(c).iter().map(|&v| Complex64::new(v, 0.0)).collect()
}

pub fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| r.random_range(0.0..1.0)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_complex_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}
