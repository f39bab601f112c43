//! Blur-guided recursive phase modulation.
//!
//! The FFT phase is mapped to `φ̂ = (φ + π) / 2π ∈ [0, 1]` and refined by
//! `M_t = M_{t-1} + s·F_t ⊙ M_{t-1} ⊙ (1 - M_{t-1})` for `t = 1..T`, where
//! `s` is the blur-derived strength. The refined phase is recombined with the
//! untouched magnitude and inverted.
//!
//! To keep the output real, the recursion is evaluated on one bin of every
//! conjugate pair `(k, -k)` and mirrored (`φ*(-k) = -φ*(k)`). Self-conjugate
//! bins (DC and Nyquist) keep their phase. The modulated spectrum is then
//! Hermitian, so the inverse is real and the magnitude is preserved exactly.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{self, arg, PhaseMap, MAGNITUDE_EPS};
use crate::tensor::ImageTensor;
use crate::vicm::check_score;

pub const DEFAULT_PHASE_STEPS: usize = 8;

/// Normalized phase `φ̂ ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormPhaseMap(pub ImageTensor);

pub fn normalize_phase(ph: &PhaseMap) -> NormPhaseMap {
    NormPhaseMap(ph.0.map(|p| (p + PI) / (2.0 * PI)))
}

pub fn denormalize_phase(np: &NormPhaseMap) -> PhaseMap {
    PhaseMap(np.0.map(|m| 2.0 * PI * m - PI))
}

/// Phase adjustment maps `F_1..F_T` in `[0, 1]` and the strength `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseModStack {
    maps: Vec<ImageTensor>,
    strength: f64,
}

impl PhaseModStack {
    pub fn new(maps: Vec<ImageTensor>, strength: f64) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyInput);
        }
        check_score("strength", strength)?;
        for m in &maps {
            if let Some(bad) = m.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Config(format!("phase adjustment {bad} outside [0, 1]")));
            }
        }
        Ok(Self { maps, strength })
    }

    pub fn constant(t: usize, value: f64, strength: f64) -> Result<Self> {
        Self::new(vec![ImageTensor::filled(1, 1, 1, value)?; t], strength)
    }

    pub fn maps(&self) -> &[ImageTensor] {
        &self.maps
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn t_total(&self) -> usize {
        self.maps.len()
    }

    pub fn with_strength(mut self, strength: f64) -> Result<Self> {
        check_score("strength", strength)?;
        self.strength = strength;
        Ok(self)
    }

    fn check_fits(&self, dims: (usize, usize, usize)) -> Result<()> {
        let (h, w, c) = dims;
        for m in &self.maps {
            if !m.broadcasts_to(h, w, c) {
                return Err(Error::shape(format!("{h}x{w}x{c}"), m.shape_string()));
            }
        }
        Ok(())
    }
}

/// `s = gain · b`. A sharp input (`b = 0`) disables modulation.
pub fn blur_to_strength(b: f64, gain: f64) -> Result<f64> {
    check_score("b", b)?;
    check_score("gain", gain)?;
    Ok(gain * b)
}

#[inline]
fn modulate_step(m: f64, w: f64) -> f64 {
    (m + w * m * (1.0 - m)).clamp(0.0, 1.0)
}

/// Applies the `T` refinement steps elementwise to `np`.
pub fn modulate_phase(np: &NormPhaseMap, stack: &PhaseModStack) -> Result<NormPhaseMap> {
    let (h, w, c) = np.0.dims();
    stack.check_fits((h, w, c))?;
    let mut out = np.0.clone();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let idx = out.index(i, j, ch);
                let mut m = out.data()[idx];
                for f in &stack.maps {
                    m = modulate_step(m, stack.strength * f.get_broadcast(i, j, ch));
                }
                out.data_mut()[idx] = m;
            }
        }
    }
    Ok(NormPhaseMap(out))
}

/// Linear index of the conjugate-partner bin `(-u mod H, -v mod W)`.
#[inline]
pub fn conjugate_partner(k: usize, height: usize, width: usize) -> usize {
    let (u, v) = (k / width, k % width);
    ((height - u) % height) * width + (width - v) % width
}

#[derive(Debug, Clone)]
pub struct VgpmOutput {
    /// Output clamped to `[0, 1]`.
    pub image: ImageTensor,
    /// Output before the final clamp; the losses see this one.
    pub pre_clamp: ImageTensor,
    /// Modulated phase `φ*` over the full spectrum.
    pub modulated_phase: PhaseMap,
    /// Largest imaginary residue of the inverse transform.
    pub max_imag: f64,
}

/// Per-channel record of the forward pass needed by the backward pass.
pub(crate) struct ChannelTape {
    spectrum: Vec<Complex64>,
    rotated: Vec<Complex64>,
    delta: Vec<f64>,
    target_phase: Vec<f64>,
    /// `M_0..M_T` for representative bins, `T + 1` entries per bin.
    states: Vec<f64>,
    phase_inverse: Vec<Complex64>,
    s_phase: Vec<f64>,
}

pub(crate) struct VgpmTape {
    pub out: VgpmOutput,
    pub s_phase: ImageTensor,
    channels: Vec<ChannelTape>,
}

pub(crate) fn vgpm_forward_taped(img: &ImageTensor, stack: &PhaseModStack) -> Result<VgpmTape> {
    let (h, w, c) = img.dims();
    stack.check_fits((h, w, c))?;
    let n = h * w;
    let t_total = stack.t_total();
    let s = stack.strength;

    let mut pre = Vec::with_capacity(img.len());
    let mut phase_all = Vec::with_capacity(img.len());
    let mut s_phase_all = Vec::with_capacity(img.len());
    let mut max_imag = 0.0_f64;
    let mut channels = Vec::with_capacity(c);

    for ch in 0..c {
        let plane: Vec<Complex64> = img.plane(ch).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let spectrum = spectral::forward_plane(&plane, h, w);
        let mut delta = vec![0.0; n];
        let mut target_phase = vec![0.0; n];
        let mut states = vec![0.0; n * (t_total + 1)];

        for k in 0..n {
            let p = conjugate_partner(k, h, w);
            let phi = arg(spectrum[k]);
            if p == k {
                target_phase[k] = phi;
            } else if k < p {
                let (u, v) = (k / w, k % w);
                let st = &mut states[k * (t_total + 1)..(k + 1) * (t_total + 1)];
                st[0] = (phi + PI) / (2.0 * PI);
                for (t, f) in stack.maps.iter().enumerate() {
                    st[t + 1] = modulate_step(st[t], s * f.get_broadcast(u, v, ch));
                }
                let target = 2.0 * PI * st[t_total] - PI;
                target_phase[k] = target;
                delta[k] = target - phi;
                target_phase[p] = -target;
                delta[p] = -delta[k];
            }
        }

        let rotated: Vec<Complex64> = spectrum
            .iter()
            .zip(&delta)
            .map(|(z, &d)| z * Complex64::from_polar(1.0, d))
            .collect();
        let inverse = spectral::inverse_plane(&rotated, h, w);
        for z in &inverse {
            max_imag = max_imag.max(z.im.abs());
            pre.push(z.re);
        }

        let unit: Vec<Complex64> = target_phase.iter().map(|&p| Complex64::from_polar(1.0, p)).collect();
        let phase_inverse = spectral::inverse_plane(&unit, h, w);
        let s_phase: Vec<f64> = phase_inverse
            .iter()
            .map(|z| (z.norm_sqr() + MAGNITUDE_EPS).sqrt())
            .collect();
        s_phase_all.extend_from_slice(&s_phase);
        phase_all.extend_from_slice(&target_phase);

        channels.push(ChannelTape {
            spectrum,
            rotated,
            delta,
            target_phase,
            states,
            phase_inverse,
            s_phase,
        });
    }

    let pre_clamp = ImageTensor::new(h, w, c, pre)?;
    Ok(VgpmTape {
        out: VgpmOutput {
            image: pre_clamp.clamped(),
            pre_clamp,
            modulated_phase: PhaseMap(ImageTensor::new(h, w, c, phase_all)?),
            max_imag,
        },
        s_phase: ImageTensor::new(h, w, c, s_phase_all)?,
        channels,
    })
}

/// Backward pass. Takes the loss gradients with respect to the pre-clamp
/// output and to the phase-only reconstruction; returns the gradient with
/// respect to the input image and to each (squashed) adjustment map.
pub(crate) fn vgpm_backward(
    tape: &VgpmTape,
    stack: &PhaseModStack,
    grad_pre: &ImageTensor,
    grad_s_phase: &ImageTensor,
) -> (ImageTensor, Vec<ImageTensor>) {
    let (h, w, c) = grad_pre.dims();
    let n = h * w;
    let inv_n = 1.0 / n as f64;
    let t_total = stack.t_total();
    let s = stack.strength;
    let mut grad_maps: Vec<ImageTensor> = stack.maps.iter().map(|m| m.map(|_| 0.0)).collect();
    let mut grad_img = Vec::with_capacity(grad_pre.len());

    for (ch, ct) in tape.channels.iter().enumerate() {
        // phase-only reconstruction: P = IFFT(U), sp = sqrt(|P|² + ε)
        let g_p: Vec<Complex64> = ct
            .phase_inverse
            .iter()
            .zip(&ct.s_phase)
            .zip(grad_s_phase.plane(ch))
            .map(|((z, &sp), &g)| z * (g / sp))
            .collect();
        let g_u: Vec<Complex64> = spectral::forward_plane(&g_p, h, w)
            .into_iter()
            .map(|z| z * inv_n)
            .collect();

        // image path: y = Re(IFFT(Z)), Z = S·e^{jΔ}
        let g_y: Vec<Complex64> = grad_pre.plane(ch).iter().map(|&g| Complex64::new(g, 0.0)).collect();
        let g_z: Vec<Complex64> = spectral::forward_plane(&g_y, h, w)
            .into_iter()
            .map(|z| z * inv_n)
            .collect();

        let mut g_s: Vec<Complex64> = g_z
            .iter()
            .zip(&ct.delta)
            .map(|(g, &d)| g * Complex64::from_polar(1.0, -d))
            .collect();

        let g_target = |k: usize| {
            let (sin, cos) = ct.target_phase[k].sin_cos();
            -g_u[k].re * sin + g_u[k].im * cos
        };
        let g_delta = |k: usize| {
            let jz = Complex64::new(-ct.rotated[k].im, ct.rotated[k].re);
            (g_z[k].conj() * jz).re
        };

        #[allow(clippy::needless_range_loop)]
        for k in 0..n {
            let p = conjugate_partner(k, h, w);
            if p <= k {
                continue;
            }
            let g_tgt = g_target(k) - g_target(p);
            let g_dl = g_delta(k) - g_delta(p);
            let mut g_m = 2.0 * PI * (g_tgt + g_dl);
            let (u, v) = (k / w, k % w);
            let st = &ct.states[k * (t_total + 1)..(k + 1) * (t_total + 1)];
            for t in (0..t_total).rev() {
                let m = st[t];
                let f = &stack.maps[t];
                let wt = s * f.get_broadcast(u, v, ch);
                let bidx = f.broadcast_index(u, v, ch);
                grad_maps[t].data_mut()[bidx] += g_m * m * (1.0 - m) * s;
                g_m *= 1.0 + wt * (1.0 - 2.0 * m);
            }
            let g_phi = g_m / (2.0 * PI) - g_dl;
            let z = ct.spectrum[k];
            let r2 = z.norm_sqr();
            if r2 > 0.0 {
                g_s[k] += Complex64::new(-z.im, z.re) * (g_phi / r2);
            }
        }

        // S = DFT(x) with x real: ∂L/∂x = Re(DFTᴴ g_s) = n · Re(IFFT(g_s))
        let back = spectral::inverse_plane(&g_s, h, w);
        grad_img.extend(back.iter().map(|z| z.re * n as f64));
    }

    (
        ImageTensor::new(h, w, c, grad_img).expect("dims match the forward pass"),
        grad_maps,
    )
}

/// Modulates the phase of `img` with `stack` and inverts.
pub fn vgpm_apply(img: &ImageTensor, stack: &PhaseModStack) -> Result<VgpmOutput> {
    Ok(vgpm_forward_taped(img, stack)?.out)
}

/// [`vgpm_apply`] with the strength taken from a blur score.
pub fn vgpm_apply_scored(img: &ImageTensor, stack: &PhaseModStack, b: f64, gain: f64) -> Result<VgpmOutput> {
    let stack = stack.clone().with_strength(blur_to_strength(b, gain)?)?;
    vgpm_apply(img, &stack)
}
