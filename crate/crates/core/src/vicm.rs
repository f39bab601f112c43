//! Visibility-conditioned illumination curves.
//!
//! Brightening is the recursion `E_n = E_{n-1} + A_n ⊙ E_{n-1} ⊙ (1 - E_{n-1})`
//! with `E_0 = x`. The visibility score picks how many of the `N` curve maps
//! stay active; maps past that count are zeroed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const DEFAULT_CURVE_ITERATIONS: usize = 8;

/// Where a pair of perceptual scores came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreSource {
    File,
    Proxy,
}

/// Visibility `v` (0 = darkest) and blurriness `b` (1 = most blurred).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptualScores {
    pub v: f64,
    pub b: f64,
    pub source: ScoreSource,
}

impl PerceptualScores {
    pub fn new(v: f64, b: f64, source: ScoreSource) -> Result<Self> {
        check_score("v", v)?;
        check_score("b", b)?;
        Ok(Self { v, b, source })
    }
}

pub(crate) fn check_score(name: &'static str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::ScoreOutOfRange { name, value })
    }
}

/// Deterministic stand-in for a learned visibility head: maps `v` to the
/// number of active curve iterations and to the exposure-target offset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationPolicy {
    pub n_max: usize,
    /// `E_d = offset_gain · (2v - 1)`, clamped to `±MAX_EXPOSURE_OFFSET`.
    pub offset_gain: f64,
}

pub const MAX_EXPOSURE_OFFSET: f64 = 0.1;

impl Default for IterationPolicy {
    fn default() -> Self {
        Self {
            n_max: DEFAULT_CURVE_ITERATIONS,
            offset_gain: 0.1,
        }
    }
}

/// `round(n_max · (1 - v))`, ties rounded up.
pub fn visibility_to_iterations(v: f64, policy: &IterationPolicy) -> Result<usize> {
    check_score("v", v)?;
    let n = (policy.n_max as f64 * (1.0 - v) + 0.5).floor();
    Ok((n.max(0.0) as usize).min(policy.n_max))
}

pub fn exposure_offset(v: f64, policy: &IterationPolicy) -> Result<f64> {
    check_score("v", v)?;
    Ok((policy.offset_gain * (2.0 * v - 1.0)).clamp(-MAX_EXPOSURE_OFFSET, MAX_EXPOSURE_OFFSET))
}

/// Curve maps `A_1..A_N` (already squashed into `[-1, 1]`) and the number of
/// leading maps that are active.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveParamStack {
    maps: Vec<ImageTensor>,
    n_v: usize,
}

impl CurveParamStack {
    /// Builds an unmasked stack (`n_v = N`). Values must lie in `[-1, 1]`.
    pub fn new(maps: Vec<ImageTensor>) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::EmptyInput);
        }
        for m in &maps {
            if let Some(bad) = m.data().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return Err(Error::Config(format!("curve parameter {bad} outside [-1, 1]")));
            }
        }
        let n_v = maps.len();
        Ok(Self { maps, n_v })
    }

    /// `n` copies of a constant field of the given dims.
    pub fn constant(n: usize, value: f64, height: usize, width: usize, channels: usize) -> Result<Self> {
        let field = ImageTensor::filled(height, width, channels, value)?;
        Self::new(vec![field; n])
    }

    pub fn n_total(&self) -> usize {
        self.maps.len()
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn maps(&self) -> &[ImageTensor] {
        &self.maps
    }

    /// Maps that take part in the recursion.
    pub fn active(&self) -> &[ImageTensor] {
        &self.maps[..self.n_v]
    }
}

/// `e + a ⊙ e ⊙ (1 - e)`. `a` may broadcast along unit axes.
pub fn apply_curve_step(e_prev: &ImageTensor, a: &ImageTensor) -> Result<ImageTensor> {
    let (h, w, c) = e_prev.dims();
    if !a.broadcasts_to(h, w, c) {
        return Err(Error::shape(e_prev.shape_string(), a.shape_string()));
    }
    let mut out = e_prev.clone();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let idx = out.index(i, j, ch);
                out.data_mut()[idx] = curve_step(e_prev.data()[idx], a.get_broadcast(i, j, ch));
            }
        }
    }
    Ok(out)
}

#[inline]
pub(crate) fn curve_step(e: f64, a: f64) -> f64 {
    // e² ≤ result ≤ 2e - e² analytically; the clamp only absorbs rounding.
    (e + a * e * (1.0 - e)).clamp(0.0, 1.0)
}

/// Runs the recursion over the active maps of `stack`.
pub fn apply_curves(x: &ImageTensor, stack: &CurveParamStack) -> Result<ImageTensor> {
    let mut e = x.clone();
    for a in stack.active() {
        e = apply_curve_step(&e, a)?;
    }
    Ok(e)
}

/// Zeroes every map with 1-based index above `n_v`.
pub fn mask_curves(stack: &CurveParamStack, n_v: usize) -> Result<CurveParamStack> {
    let n = stack.n_total();
    if n_v > n {
        return Err(Error::IterationOutOfRange { n: n_v, max: n });
    }
    let maps = stack
        .maps
        .iter()
        .enumerate()
        .map(|(idx, m)| if idx < n_v { m.clone() } else { m.map(|_| 0.0) })
        .collect();
    Ok(CurveParamStack {
        maps,
        n_v: n_v.min(stack.n_v),
    })
}

/// How the per-image curve parameters are laid out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// One trainable value per pixel (and channel) per iteration.
    FreeField,
    /// One trainable scalar per iteration (and channel), broadcast spatially.
    ConstantField,
}

/// Odd, monotone saturation into `[-1, 1]` with unit slope at 0.
#[inline]
pub fn squash_curve(raw: f64) -> f64 {
    raw.tanh()
}

#[inline]
pub(crate) fn squash_curve_grad(raw: f64) -> f64 {
    let t = raw.tanh();
    1.0 - t * t
}

/// Dims of one parameter field for the given mode.
pub fn field_dims(
    mode: EstimatorMode,
    height: usize,
    width: usize,
    channels: usize,
    per_channel: bool,
) -> (usize, usize, usize) {
    let c = if per_channel { channels } else { 1 };
    match mode {
        EstimatorMode::FreeField => (height, width, c),
        EstimatorMode::ConstantField => (1, 1, c),
    }
}

/// Trainable pre-squash curve parameters for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveParams {
    pub raw: Vec<ImageTensor>,
}

impl CurveParams {
    pub fn n_total(&self) -> usize {
        self.raw.len()
    }

    /// Squashed, unmasked stack.
    pub fn stack(&self) -> CurveParamStack {
        CurveParamStack {
            maps: self.raw.iter().map(|r| r.map(squash_curve)).collect(),
            n_v: self.raw.len(),
        }
    }
}

/// Zero-initialized trainable curves for `x`; the resulting stack is the
/// identity enhancement.
pub fn estimate_curves(
    x: &ImageTensor,
    mode: EstimatorMode,
    n_total: usize,
    per_channel: bool,
) -> Result<CurveParams> {
    if n_total == 0 {
        return Err(Error::Config("curve iteration count must be at least 1".into()));
    }
    let (h, w, c) = field_dims(mode, x.height(), x.width(), x.channels(), per_channel);
    let field = ImageTensor::zeros(h, w, c)?;
    Ok(CurveParams {
        raw: vec![field; n_total],
    })
}

/// Intermediate states `E_0..E_{n_v}` of the recursion, kept for the
/// backward pass.
pub(crate) struct CurveTape {
    pub states: Vec<ImageTensor>,
}

impl CurveTape {
    pub fn output(&self) -> &ImageTensor {
        self.states.last().expect("tape holds at least E_0")
    }
}

pub(crate) fn apply_curves_taped(x: &ImageTensor, stack: &CurveParamStack) -> Result<CurveTape> {
    let mut states = Vec::with_capacity(stack.n_v + 1);
    states.push(x.clone());
    for a in stack.active() {
        let next = apply_curve_step(states.last().unwrap(), a)?;
        states.push(next);
    }
    Ok(CurveTape { states })
}

/// Gradients of the loss with respect to each active squashed map, given the
/// gradient with respect to the final state. Broadcast axes are summed.
pub(crate) fn curves_backward(
    tape: &CurveTape,
    stack: &CurveParamStack,
    grad_out: &ImageTensor,
) -> Vec<ImageTensor> {
    let (h, w, c) = grad_out.dims();
    let mut g = grad_out.data().to_vec();
    let mut grads: Vec<ImageTensor> = stack
        .maps
        .iter()
        .map(|m| m.map(|_| 0.0))
        .collect();
    for n in (0..stack.n_v).rev() {
        let e_prev = &tape.states[n];
        let a = &stack.maps[n];
        let ga = &mut grads[n];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let idx = e_prev.index(i, j, ch);
                    let e = e_prev.data()[idx];
                    let aij = a.get_broadcast(i, j, ch);
                    let bidx = ga.broadcast_index(i, j, ch);
                    ga.data_mut()[bidx] += g[idx] * e * (1.0 - e);
                    g[idx] *= 1.0 + aij * (1.0 - 2.0 * e);
                }
            }
        }
    }
    grads
}
