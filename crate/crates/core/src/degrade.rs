//! Synthetic degradation `clamp(γ·(x ⊛ k) + n, 0, 1)`, reference metrics and
//! the heuristic score proxy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral;
use crate::tensor::ImageTensor;
use crate::vicm::{PerceptualScores, ScoreSource};

/// Tolerance on the unit-sum check for kernels.
pub const KERNEL_SUM_TOL: f64 = 1e-9;

/// Odd-sized 2-D kernel, centred on its middle tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub height: usize,
    pub width: usize,
    pub taps: Vec<f64>,
}

impl Kernel {
    pub fn new(height: usize, width: usize, taps: Vec<f64>) -> Result<Self> {
        if height.is_multiple_of(2) || width.is_multiple_of(2) || taps.len() != height * width {
            return Err(Error::InvalidKernelSpec(format!(
                "{height}x{width} kernel with {} taps (sides must be odd)",
                taps.len()
            )));
        }
        Ok(Self { height, width, taps })
    }

    pub fn delta() -> Self {
        Self {
            height: 1,
            width: 1,
            taps: vec![1.0],
        }
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.taps[a * self.width + b]
    }

    pub fn sum(&self) -> f64 {
        self.taps.iter().sum()
    }

    /// Nonnegative and summing to one within [`KERNEL_SUM_TOL`].
    pub fn validate(&self) -> Result<()> {
        let sum = self.sum();
        if self.taps.iter().any(|&t| t < 0.0 || !t.is_finite()) || (sum - 1.0).abs() > KERNEL_SUM_TOL {
            return Err(Error::KernelNotNormalized { sum });
        }
        Ok(())
    }

    fn normalized(height: usize, width: usize, mut taps: Vec<f64>) -> Self {
        let sum: f64 = taps.iter().sum();
        taps.iter_mut().for_each(|t| *t /= sum);
        Self { height, width, taps }
    }
}

/// Sampled isotropic Gaussian on a `size x size` grid, normalized to unit sum.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidKernelSpec(format!("gaussian size {size} must be odd and positive")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidKernelSpec(format!("gaussian sigma {sigma} must be positive")));
    }
    let r = (size / 2) as f64;
    let mut taps = Vec::with_capacity(size * size);
    for a in 0..size {
        for b in 0..size {
            let (dy, dx) = (a as f64 - r, b as f64 - r);
            taps.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
        }
    }
    Ok(Kernel::normalized(size, size, taps))
}

/// Anti-aliased line segment of `length` pixels through the kernel centre.
///
/// The segment runs between the points at distance `(length - 1) / 2` on
/// either side of the centre, at `angle_deg` counter-clockwise from the
/// horizontal axis (rows grow downward). It is sampled at four points per
/// pixel and each sample is splatted bilinearly.
pub fn motion_kernel(length: f64, angle_deg: f64) -> Result<Kernel> {
    if !(length >= 1.0 && length.is_finite()) || !angle_deg.is_finite() {
        return Err(Error::InvalidKernelSpec(format!(
            "motion kernel needs length >= 1 and a finite angle, got {length}, {angle_deg}"
        )));
    }
    let half = (length - 1.0) / 2.0;
    if half == 0.0 {
        return Ok(Kernel::delta());
    }
    let radius = half.ceil() as usize + 1;
    let size = 2 * radius + 1;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let samples = (4.0 * (length - 1.0)).ceil() as usize + 1;
    let mut taps = vec![0.0; size * size];
    for s in 0..samples {
        let t = -half + 2.0 * half * s as f64 / (samples - 1) as f64;
        let y = radius as f64 - t * sin;
        let x = radius as f64 + t * cos;
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        let (y0, x0) = (y0 as usize, x0 as usize);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let w = wy * wx;
                if w > 0.0 {
                    taps[(y0 + dy) * size + x0 + dx] += w;
                }
            }
        }
    }
    Ok(Kernel::normalized(size, size, taps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub gamma: f64,
    pub kernel: Kernel,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config(format!("gamma {} must lie in (0, 1]", self.gamma)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise sigma {} must be >= 0", self.noise_sigma)));
        }
        self.kernel.validate()
    }
}

/// Circular convolution of every channel with `kernel`.
pub fn convolve_circular(img: &ImageTensor, kernel: &Kernel) -> ImageTensor {
    let (h, w, c) = img.dims();
    let (ch, cw) = (kernel.height / 2, kernel.width / 2);
    let mut out = ImageTensor::zeros(h, w, c).expect("dims come from a valid image");
    for ch_idx in 0..c {
        let src = img.plane(ch_idx);
        let dst = out.plane_mut(ch_idx);
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..kernel.height {
                    // source row i - (a - ch), wrapped
                    let si = (i + h * (1 + ch / h) + ch - a) % h;
                    for b in 0..kernel.width {
                        let sj = (j + w * (1 + cw / w) + cw - b) % w;
                        acc += kernel.get(a, b) * src[si * w + sj];
                    }
                }
                dst[i * w + j] = acc;
            }
        }
    }
    out
}

/// `clamp(γ·(x ⊛ k) + n, 0, 1)` with `n ~ N(0, σ²)` drawn from a ChaCha8
/// stream seeded by `cfg.seed`, in channel-planar row-major order. No
/// numbers are drawn when `σ = 0`.
pub fn degrade(x_hq: &ImageTensor, cfg: &DegradationConfig) -> Result<ImageTensor> {
    cfg.validate()?;
    let mut y = convolve_circular(x_hq, &cfg.kernel);
    y.data_mut().iter_mut().for_each(|v| *v *= cfg.gamma);
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        y.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Ok(y.clamped())
}

/// `10·log10(peak² / MSE)`; `+∞` when the images are identical.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean of a well-lit scene, used to scale the visibility proxy.
pub const NOMINAL_MEAN_LUMA: f64 = 0.5;

/// Normalized spatial-frequency radius below which energy counts as low
/// frequency. Radius 1 is the Nyquist limit along an axis, so this is the
/// lowest quarter of the band.
pub const LOW_BAND_RADIUS: f64 = 0.25;

/// High-frequency energy fraction of [`test_pattern`] at 32x32, the sharp
/// calibration target.
pub const DEFAULT_HF_REF: f64 = 0.9288;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub hf_ref: f64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self { hf_ref: DEFAULT_HF_REF }
    }
}

/// Rec. 601 luma for RGB, the value itself for grayscale.
pub fn luminance(img: &ImageTensor) -> ImageTensor {
    if img.channels() == 1 {
        return img.clone();
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let data = (0..img.plane_len()).map(|k| 0.299 * r[k] + 0.587 * g[k] + 0.114 * b[k]).collect();
    ImageTensor::new(img.height(), img.width(), 1, data).expect("plane dims are valid")
}

/// Share of the non-DC spectral energy of the luminance that lies above
/// [`LOW_BAND_RADIUS`]. Zero for a constant image.
pub fn high_frequency_fraction(img: &ImageTensor) -> f64 {
    let y = luminance(img);
    let (h, w, _) = y.dims();
    let spec = spectral::fft2(&y);
    let (mut total, mut high) = (0.0, 0.0);
    for u in 0..h {
        let fu = 2.0 * u.min(h - u) as f64 / h as f64;
        for v in 0..w {
            if u == 0 && v == 0 {
                continue;
            }
            let fv = 2.0 * v.min(w - v) as f64 / w as f64;
            let e = spec.get(u, v, 0).norm_sqr();
            total += e;
            if (fu * fu + fv * fv).sqrt() > LOW_BAND_RADIUS {
                high += e;
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        high / total
    }
}

/// Heuristic stand-in for external perceptual scores:
/// `v = clamp(mean luma / 0.5)`, `b = clamp(1 - hf / hf_ref)`.
pub fn proxy_scores(img: &ImageTensor, cfg: &ProxyConfig) -> Result<PerceptualScores> {
    if !(cfg.hf_ref > 0.0 && cfg.hf_ref.is_finite()) {
        return Err(Error::Config(format!("proxy hf_ref {} must be positive", cfg.hf_ref)));
    }
    let v = (luminance(img).mean() / NOMINAL_MEAN_LUMA).clamp(0.0, 1.0);
    let b = (1.0 - high_frequency_fraction(img) / cfg.hf_ref).clamp(0.0, 1.0);
    PerceptualScores::new(v, b, ScoreSource::Proxy)
}

/// Checkerboard of 4-pixel cells over a horizontal ramp:
/// `0.1 + 0.6·checker + 0.3·j/(w-1)`, replicated over `channels`.
pub fn test_pattern(height: usize, width: usize, channels: usize) -> Result<ImageTensor> {
    let ramp = |j: usize| if width > 1 { j as f64 / (width - 1) as f64 } else { 0.0 };
    ImageTensor::from_fn(height, width, channels, |i, j, _| {
        let checker = ((i / 4 + j / 4) % 2) as f64;
        0.1 + 0.6 * checker + 0.3 * ramp(j)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_degradation() {
        let x = test_pattern(8, 8, 1).unwrap();
        let cfg = DegradationConfig {
            gamma: 1.0,
            kernel: Kernel::delta(),
            noise_sigma: 0.0,
            seed: 0,
        };
        assert_eq!(degrade(&x, &cfg).unwrap(), x);
    }

    #[test]
    fn attenuation_only() {
        let x = ImageTensor::filled(4, 4, 1, 0.8).unwrap();
        let cfg = DegradationConfig {
            gamma: 0.25,
            kernel: Kernel::delta(),
            noise_sigma: 0.0,
            seed: 0,
        };
        assert!(degrade(&x, &cfg).unwrap().data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn unnormalized_kernel_is_rejected() {
        let cfg = DegradationConfig {
            gamma: 1.0,
            kernel: Kernel::new(1, 3, vec![0.5, 0.5, 0.5]).unwrap(),
            noise_sigma: 0.0,
            seed: 0,
        };
        let x = ImageTensor::zeros(4, 4, 1).unwrap();
        assert!(matches!(degrade(&x, &cfg), Err(Error::KernelNotNormalized { .. })));
    }

    #[test]
    fn short_kernels_are_deltas() {
        assert_eq!(gaussian_kernel(1, 2.0).unwrap(), Kernel::delta());
        assert_eq!(motion_kernel(1.0, 30.0).unwrap(), Kernel::delta());
        assert!(gaussian_kernel(4, 1.0).is_err());
        assert!(motion_kernel(0.5, 0.0).is_err());
    }

    #[test]
    fn horizontal_motion_kernel_is_a_row() {
        let k = motion_kernel(3.0, 0.0).unwrap();
        let c = k.height / 2;
        for a in 0..k.height {
            for b in 0..k.width {
                let on_row = a == c && (c - 1..=c + 1).contains(&b);
                assert_eq!(k.get(a, b) > 1e-12, on_row, "tap ({a},{b})");
            }
        }
        assert!((k.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = ImageTensor::filled(2, 2, 1, 0.5).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = ImageTensor::filled(2, 2, 1, 0.6).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let z = ImageTensor::zeros(2, 2, 1).unwrap();
        let o = ImageTensor::filled(2, 2, 1, 1.0).unwrap();
        assert_eq!(psnr(&z, &o, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn hf_ref_matches_the_calibration_target() {
        let hf = high_frequency_fraction(&test_pattern(32, 32, 1).unwrap());
        assert!((hf - DEFAULT_HF_REF).abs() < 5e-3, "calibration target gives {hf}");
    }

    #[test]
    fn proxy_edge_cases() {
        let black = ImageTensor::zeros(8, 8, 1).unwrap();
        assert_eq!(proxy_scores(&black, &ProxyConfig::default()).unwrap().v, 0.0);
        let bright = ImageTensor::filled(8, 8, 3, 0.9).unwrap();
        let s = proxy_scores(&bright, &ProxyConfig::default()).unwrap();
        assert_eq!(s.b, 1.0);
        assert_eq!(s.source, ScoreSource::Proxy);
    }
}
