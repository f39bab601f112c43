//! Rotary positional encodings for token grids and a small multi-head
//! attention block that consumes them.
//!
//! Three field kinds exist. The spatial field is axial RoPE on scale-aligned
//! coordinates. The frequency field rotates every channel pair of a token by
//! the DFT phase of the previous-scale grid at that token. The fused field
//! mixes the two, either by interpolating the 2x2 matrices or by
//! interpolating the angles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{self, arg};
use crate::tensor::ImageTensor;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

/// Spectral bins whose magnitude is at most this fraction of the largest bin
/// are treated as exact zeros and get angle 0.
pub const ZERO_BIN_REL_TOL: f64 = 1e-12;

/// Token embeddings on an `h x w` grid, stored token-major: the channels of
/// token `(i, j)` occupy `data[(i * w + j) * C ..][..C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    h: usize,
    w: usize,
    channels: usize,
    data: Vec<f64>,
}

impl TokenGrid {
    pub fn new(h: usize, w: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || w == 0 || channels == 0 {
            return Err(Error::InvalidDims {
                height: h,
                width: w,
                channels,
            });
        }
        if !channels.is_multiple_of(2) {
            return Err(Error::OddChannels(channels));
        }
        if data.len() != h * w * channels {
            return Err(Error::shape(format!("{} values", h * w * channels), format!("{} values", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("token grid contains non-finite values".into()));
        }
        Ok(Self { h, w, channels, data })
    }

    pub fn from_fn(h: usize, w: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(h * w * channels);
        for i in 0..h {
            for j in 0..w {
                for c in 0..channels {
                    data.push(f(i, j, c));
                }
            }
        }
        Self::new(h, w, channels, data)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, self.channels)
    }

    pub fn tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn token(&self, t: usize) -> &[f64] {
        &self.data[t * self.channels..(t + 1) * self.channels]
    }

    pub fn token_at(&self, i: usize, j: usize) -> &[f64] {
        self.token(i * self.w + j)
    }

    /// Mean over channels as a single-channel image, the input to the phase
    /// extraction.
    pub fn channel_mean(&self) -> ImageTensor {
        let inv = 1.0 / self.channels as f64;
        let data = (0..self.tokens()).map(|t| self.token(t).iter().sum::<f64>() * inv).collect();
        ImageTensor::new(self.h, self.w, 1, data).expect("grid dims are valid")
    }
}

/// One angle per token, in `(-π, π]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleField {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl AngleField {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.w + j]
    }

    /// Nearest-neighbour resampling: target `(i, j)` reads source
    /// `(floor(i * h_src / h), floor(j * w_src / w))`.
    pub fn resample(&self, h: usize, w: usize) -> AngleField {
        if h == self.h && w == self.w {
            return self.clone();
        }
        let mut data = Vec::with_capacity(h * w);
        for i in 0..h {
            let si = (i * self.h / h).min(self.h - 1);
            for j in 0..w {
                let sj = (j * self.w / w).min(self.w - 1);
                data.push(self.get(si, sj));
            }
        }
        AngleField { h, w, data }
    }
}

/// DFT phase of the channel-mean grid, resampled to `h x w`.
pub fn phase_angles(prev: &TokenGrid, h: usize, w: usize) -> Result<AngleField> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidDims {
            height: h,
            width: w,
            channels: prev.channels,
        });
    }
    let spec = spectral::fft2(&prev.channel_mean());
    let peak = spec.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let cutoff = ZERO_BIN_REL_TOL * peak;
    let data = spec
        .data()
        .iter()
        .map(|&z| if z.norm() <= cutoff { 0.0 } else { arg(z) })
        .collect();
    Ok(AngleField {
        h: prev.h,
        w: prev.w,
        data,
    }
    .resample(h, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RopeMode {
    Spatial,
    Frequency,
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    /// Convex combination of the 2x2 matrices. Not a rotation in general.
    #[default]
    Matrix,
    /// Rotation by the convex combination of the two angles.
    Angle,
}

/// Mixing weight `λ = sigmoid(raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionParam {
    pub raw: f64,
}

impl FusionParam {
    pub fn new(raw: f64) -> Self {
        Self { raw }
    }

    /// Inverse of [`FusionParam::lambda`]. The endpoints 0 and 1 map to
    /// infinite raw values, which `lambda` sends back exactly.
    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::ScoreOutOfRange {
                name: "lambda",
                value: lambda,
            });
        }
        Ok(Self {
            raw: (lambda / (1.0 - lambda)).ln(),
        })
    }

    pub fn lambda(&self) -> f64 {
        1.0 / (1.0 + (-self.raw).exp())
    }
}

/// Row-major 2x2 block `[[a, b], [c, d]]` acting on a channel pair.
pub type Block = [f64; 4];

pub fn rotation(theta: f64) -> Block {
    let (s, c) = theta.sin_cos();
    [c, -s, s, c]
}

/// Per-token, per-pair 2x2 blocks. Pure rotation fields also keep their
/// angles so they can be fused in angle mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RotaryField {
    h: usize,
    w: usize,
    pairs: usize,
    blocks: Vec<Block>,
    angles: Option<Vec<f64>>,
    mode: RopeMode,
}

impl RotaryField {
    fn from_angles(h: usize, w: usize, pairs: usize, angles: Vec<f64>, mode: RopeMode) -> Self {
        let blocks = angles.iter().map(|&a| rotation(a)).collect();
        Self {
            h,
            w,
            pairs,
            blocks,
            angles: Some(angles),
            mode,
        }
    }

    pub fn identity(h: usize, w: usize, channels: usize) -> Result<Self> {
        check_channels(channels)?;
        let pairs = channels / 2;
        Ok(Self::from_angles(h, w, pairs, vec![0.0; h * w * pairs], RopeMode::Spatial))
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.h, self.w, 2 * self.pairs)
    }

    pub fn mode(&self) -> RopeMode {
        self.mode
    }

    pub fn pairs(&self) -> usize {
        self.pairs
    }

    pub fn block(&self, token: usize, pair: usize) -> Block {
        self.blocks[token * self.pairs + pair]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn angles(&self) -> Option<&[f64]> {
        self.angles.as_deref()
    }

    /// Applies the blocks to every token of `grid`.
    pub fn apply(&self, grid: &TokenGrid) -> Result<TokenGrid> {
        if grid.dims() != self.dims() {
            return Err(Error::shape(
                format!("{}x{}x{}", self.h, self.w, 2 * self.pairs),
                format!("{}x{}x{}", grid.h, grid.w, grid.channels),
            ));
        }
        let mut out = grid.data.clone();
        for t in 0..grid.tokens() {
            for p in 0..self.pairs {
                let [a, b, c, d] = self.block(t, p);
                let x0 = grid.data[t * grid.channels + 2 * p];
                let x1 = grid.data[t * grid.channels + 2 * p + 1];
                out[t * grid.channels + 2 * p] = a * x0 + b * x1;
                out[t * grid.channels + 2 * p + 1] = c * x0 + d * x1;
            }
        }
        Ok(TokenGrid { data: out, ..*grid })
    }
}

fn check_channels(channels: usize) -> Result<()> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(Error::OddChannels(channels));
    }
    Ok(())
}

/// Every channel pair of token `(u, v)` rotates by `Φ(u, v)`.
pub fn build_frequency_rope(angles: &AngleField, channels: usize) -> Result<RotaryField> {
    check_channels(channels)?;
    let pairs = channels / 2;
    let data = angles.data.iter().flat_map(|&a| std::iter::repeat_n(a, pairs)).collect();
    Ok(RotaryField::from_angles(angles.h, angles.w, pairs, data, RopeMode::Frequency))
}

/// Axial RoPE on scale-aligned coordinates.
///
/// The first `ceil(P/2)` of the `P = C/2` pairs encode the row coordinate
/// `i * h_base / h`, the rest the column coordinate `j * w_base / w`. Pair
/// `c` within its half uses frequency `base^(-2c / P)`.
pub fn build_spatial_rope(
    h: usize,
    w: usize,
    h_base: usize,
    w_base: usize,
    channels: usize,
    base: f64,
) -> Result<RotaryField> {
    check_channels(channels)?;
    if h == 0 || w == 0 || h_base == 0 || w_base == 0 {
        return Err(Error::InvalidDims {
            height: h,
            width: w,
            channels,
        });
    }
    if !(base > 0.0 && base.is_finite()) {
        return Err(Error::Config(format!("rope base must be positive, got {base}")));
    }
    let pairs = channels / 2;
    let row_pairs = pairs.div_ceil(2);
    let theta = |c: usize| base.powf(-2.0 * c as f64 / pairs as f64);
    let row_scale = h_base as f64 / h as f64;
    let col_scale = w_base as f64 / w as f64;
    let mut data = Vec::with_capacity(h * w * pairs);
    for i in 0..h {
        let y = i as f64 * row_scale;
        for j in 0..w {
            let x = j as f64 * col_scale;
            for p in 0..pairs {
                data.push(if p < row_pairs {
                    theta(p) * y
                } else {
                    theta(p - row_pairs) * x
                });
            }
        }
    }
    Ok(RotaryField::from_angles(h, w, pairs, data, RopeMode::Spatial))
}

#[inline]
fn lerp(lambda: f64, on_one: f64, on_zero: f64) -> f64 {
    if lambda == 0.0 {
        on_zero
    } else if lambda == 1.0 {
        on_one
    } else {
        lambda * on_one + (1.0 - lambda) * on_zero
    }
}

/// `λ·freq + (1 − λ)·spa`, on matrices or on angles depending on `mode`.
pub fn fuse_rope(freq: &RotaryField, spa: &RotaryField, fusion: &FusionParam, mode: FusionMode) -> Result<RotaryField> {
    if freq.dims() != spa.dims() {
        let (h, w, c) = spa.dims();
        let (fh, fw, fc) = freq.dims();
        return Err(Error::shape(format!("{h}x{w}x{c}"), format!("{fh}x{fw}x{fc}")));
    }
    let lambda = fusion.lambda();
    match mode {
        FusionMode::Matrix => {
            let blocks = freq
                .blocks
                .iter()
                .zip(&spa.blocks)
                .map(|(f, s)| std::array::from_fn(|k| lerp(lambda, f[k], s[k])))
                .collect();
            Ok(RotaryField {
                blocks,
                angles: None,
                mode: RopeMode::Fused,
                ..*spa
            })
        }
        FusionMode::Angle => {
            let (Some(fa), Some(sa)) = (&freq.angles, &spa.angles) else {
                return Err(Error::Config("angle fusion needs pure rotation fields".into()));
            };
            let angles = fa.iter().zip(sa).map(|(&f, &s)| lerp(lambda, f, s)).collect();
            Ok(RotaryField::from_angles(spa.h, spa.w, spa.pairs, angles, RopeMode::Fused))
        }
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    check_channels(channels)?;
    if heads == 0 || !channels.is_multiple_of(2 * heads) {
        return Err(Error::HeadDivisibility { channels, heads });
    }
    Ok(())
}

/// Scaled dot-product logits per head after rotating `q` and `k`.
/// `result[head][m * n_tokens + n]` is the logit of query `m` against key `n`.
pub fn attention_logits(q: &TokenGrid, k: &TokenGrid, field: &RotaryField, heads: usize) -> Result<Vec<Vec<f64>>> {
    check_heads(q.channels, heads)?;
    if k.dims() != q.dims() {
        return Err(Error::shape(
            format!("{}x{}x{}", q.h, q.w, q.channels),
            format!("{}x{}x{}", k.h, k.w, k.channels),
        ));
    }
    let qr = field.apply(q)?;
    let kr = field.apply(k)?;
    let n = q.tokens();
    let d = q.channels / heads;
    let scale = 1.0 / (d as f64).sqrt();
    Ok((0..heads)
        .map(|hd| {
            let span = hd * d..(hd + 1) * d;
            let mut logits = Vec::with_capacity(n * n);
            for m in 0..n {
                let qm = &qr.token(m)[span.clone()];
                for t in 0..n {
                    let kt = &kr.token(t)[span.clone()];
                    logits.push(qm.iter().zip(kt).map(|(a, b)| a * b).sum::<f64>() * scale);
                }
            }
            logits
        })
        .collect())
}

/// Multi-head attention with rotated queries and keys. Values are not
/// rotated. Heads are written back to their own channel span.
pub fn attention_with_rope(
    q: &TokenGrid,
    k: &TokenGrid,
    v: &TokenGrid,
    field: &RotaryField,
    heads: usize,
) -> Result<TokenGrid> {
    if v.dims() != q.dims() {
        return Err(Error::shape(
            format!("{}x{}x{}", q.h, q.w, q.channels),
            format!("{}x{}x{}", v.h, v.w, v.channels),
        ));
    }
    let logits = attention_logits(q, k, field, heads)?;
    let n = q.tokens();
    let c = q.channels;
    let d = c / heads;
    let mut out = vec![0.0; n * c];
    let mut weights = vec![0.0; n];
    for (hd, head_logits) in logits.iter().enumerate() {
        for m in 0..n {
            let row = &head_logits[m * n..(m + 1) * n];
            let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (wt, &l) in weights.iter_mut().zip(row) {
                *wt = (l - peak).exp();
                total += *wt;
            }
            let dst = &mut out[m * c + hd * d..m * c + (hd + 1) * d];
            for (t, &wt) in weights.iter().enumerate() {
                let p = wt / total;
                for (o, &val) in dst.iter_mut().zip(&v.token(t)[hd * d..(hd + 1) * d]) {
                    *o += p * val;
                }
            }
        }
    }
    TokenGrid::new(q.h, q.w, c, out)
}
