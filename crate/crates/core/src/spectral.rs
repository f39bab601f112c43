//! 2-D discrete Fourier transforms and polar (magnitude/phase) views.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the full `1/(H·W)` factor. Channels are transformed independently.
//! Arbitrary sizes are supported; the 1-D passes use `rustfft`, which falls
//! back to mixed-radix / Bluestein plans for non power-of-two lengths.

use std::cell::RefCell;
use std::f64::consts::PI;

pub use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// Largest imaginary residue tolerated by [`ifft2`] before it refuses to
/// drop the imaginary part.
pub const RESIDUAL_IMAG_TOL: f64 = 1e-4;

/// Default ε inside `sqrt(re² + im² + ε)` on differentiated paths.
pub const MAGNITUDE_EPS: f64 = 1e-12;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Complex `height × width × channels` spectrum, stored channel-planar like
/// [`ImageTensor`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<Complex64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidDims {
                height,
                width,
                channels,
            });
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(
                format!("{} bins", height * width * channels),
                format!("{} bins", data.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_parts(
        height: usize,
        width: usize,
        channels: usize,
        real: &[f64],
        imag: &[f64],
    ) -> Result<Self> {
        if real.len() != imag.len() {
            return Err(Error::shape(
                format!("{} imaginary values", real.len()),
                format!("{}", imag.len()),
            ));
        }
        let data = real
            .iter()
            .zip(imag)
            .map(|(&re, &im)| Complex64::new(re, im))
            .collect();
        Self::new(height, width, channels, data)
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize, c: usize) -> Complex64 {
        self.data[(c * self.height + u) * self.width + v]
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }

    pub fn imag_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.im).collect()
    }

    pub fn plane(&self, c: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Phase angles in `(-π, π]`, one per spectral bin.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMap(pub ImageTensor);

/// Nonnegative magnitudes, one per spectral bin.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMap(pub ImageTensor);

/// Result of an inverse transform whose imaginary part was discarded.
#[derive(Debug, Clone)]
pub struct RealInverse {
    pub image: ImageTensor,
    /// Largest `|imag|` over all samples of the complex inverse.
    pub max_imag: f64,
}

/// In-place unnormalized 2-D DFT of one `height × width` complex plane.
/// With `inverse` set the conjugate kernel is used; no scaling is applied.
pub(crate) fn dft2_plane(buf: &mut [Complex64], height: usize, width: usize, inverse: bool) {
    debug_assert_eq!(buf.len(), height * width);
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_fft, col_fft) = if inverse {
            (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
        } else {
            (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
        };
        if width > 1 {
            row_fft.process(buf);
        }
        if height > 1 {
            let mut column = vec![Complex64::new(0.0, 0.0); height];
            for j in 0..width {
                for (i, slot) in column.iter_mut().enumerate() {
                    *slot = buf[i * width + j];
                }
                col_fft.process(&mut column);
                for (i, z) in column.iter().enumerate() {
                    buf[i * width + j] = *z;
                }
            }
        }
    });
}

/// Unnormalized forward DFT of a complex plane (allocating).
pub(crate) fn forward_plane(plane: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf = plane.to_vec();
    dft2_plane(&mut buf, height, width, false);
    buf
}

/// Inverse DFT of a complex plane including the `1/(H·W)` factor.
pub(crate) fn inverse_plane(plane: &[Complex64], height: usize, width: usize) -> Vec<Complex64> {
    let mut buf = plane.to_vec();
    dft2_plane(&mut buf, height, width, true);
    let scale = 1.0 / (height * width) as f64;
    buf.iter_mut().for_each(|z| *z *= scale);
    buf
}

/// Forward 2-D DFT of every channel.
pub fn fft2(img: &ImageTensor) -> Spectrum {
    let (h, w, ch) = img.dims();
    let mut data = Vec::with_capacity(img.len());
    for c in 0..ch {
        let mut plane: Vec<Complex64> = img
            .plane(c)
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        dft2_plane(&mut plane, h, w, false);
        data.extend(plane);
    }
    Spectrum {
        height: h,
        width: w,
        channels: ch,
        data,
    }
}

/// Full complex inverse of every channel.
pub fn ifft2_complex(spec: &Spectrum) -> Spectrum {
    let (h, w, ch) = spec.dims();
    let mut data = Vec::with_capacity(spec.data.len());
    for c in 0..ch {
        data.extend(inverse_plane(spec.plane(c), h, w));
    }
    Spectrum {
        height: h,
        width: w,
        channels: ch,
        data,
    }
}

/// Inverse transform keeping the real part, reporting the discarded residue.
pub fn ifft2_real_part(spec: &Spectrum) -> RealInverse {
    let inv = ifft2_complex(spec);
    let max_imag = inv.data.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    let image = ImageTensor::new(inv.height, inv.width, inv.channels, inv.real_part())
        .expect("dims carried over from a valid spectrum");
    RealInverse { image, max_imag }
}

/// Inverse transform of a spectrum that is expected to come from a real
/// image. Fails with [`Error::ResidualImag`] when the imaginary residue
/// exceeds [`RESIDUAL_IMAG_TOL`].
pub fn ifft2(spec: &Spectrum) -> Result<ImageTensor> {
    let RealInverse { image, max_imag } = ifft2_real_part(spec);
    if max_imag > RESIDUAL_IMAG_TOL {
        return Err(Error::ResidualImag { max_imag });
    }
    Ok(image)
}

/// `arg(z)` in `(-π, π]` with `arg(0) = 0`.
#[inline]
pub fn arg(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let a = z.im.atan2(z.re);
    if a <= -PI {
        PI
    } else {
        a
    }
}

pub fn phase(spec: &Spectrum) -> PhaseMap {
    let (h, w, c) = spec.dims();
    let data = spec.data.iter().map(|&z| arg(z)).collect();
    PhaseMap(ImageTensor::new(h, w, c, data).expect("spectrum dims are valid"))
}

/// `sqrt(re² + im² + eps)`; use `eps = 0` for analysis and
/// [`MAGNITUDE_EPS`] where the result is differentiated.
pub fn magnitude(spec: &Spectrum, eps: f64) -> MagnitudeMap {
    let (h, w, c) = spec.dims();
    let data = spec.data.iter().map(|z| (z.norm_sqr() + eps).sqrt()).collect();
    MagnitudeMap(ImageTensor::new(h, w, c, data).expect("spectrum dims are valid"))
}

pub fn recombine(mag: &MagnitudeMap, ph: &PhaseMap) -> Result<Spectrum> {
    mag.0.ensure_same_shape(&ph.0)?;
    let (h, w, c) = mag.0.dims();
    let data = mag
        .0
        .data()
        .iter()
        .zip(ph.0.data())
        .map(|(&m, &p)| Complex64::from_polar(m, p))
        .collect();
    Spectrum::new(h, w, c, data)
}

/// `|IFFT(e^{jφ})|` per channel, ε-smoothed with [`MAGNITUDE_EPS`].
/// The result is a nonnegative structure map and is not clamped.
pub fn phase_only_reconstruction(ph: &PhaseMap) -> ImageTensor {
    let (h, w, ch) = ph.0.dims();
    let mut data = Vec::with_capacity(ph.0.len());
    for c in 0..ch {
        let unit: Vec<Complex64> = ph
            .0
            .plane(c)
            .iter()
            .map(|&p| Complex64::from_polar(1.0, p))
            .collect();
        data.extend(
            inverse_plane(&unit, h, w)
                .iter()
                .map(|z| (z.norm_sqr() + MAGNITUDE_EPS).sqrt()),
        );
    }
    ImageTensor::new(h, w, ch, data).expect("phase map dims are valid")
}
