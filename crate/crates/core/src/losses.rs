//! Reference-free objectives: exposure, structural entropy, structural
//! contrast, total variation, and their weighted sum.
//!
//! Every differentiable term has a `*_grad` companion returning the gradient
//! with respect to its image argument. The entropy and contrast terms act on
//! the channel mean of the phase-only reconstruction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const DEFAULT_EXPOSURE_BASE: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramMode {
    /// Hat-function assignment to the two nearest bin centers.
    Soft,
    /// Nearest bin center; not differentiable.
    Hard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub exposure_base: f64,
    pub lambda_ex: f64,
    pub lambda_en: f64,
    pub lambda_con: f64,
    pub lambda_tv: f64,
    pub bins: usize,
    pub patch_grid: (usize, usize),
    pub histogram: HistogramMode,
    /// Flip the entropy term so that it is maximized instead of minimized.
    pub maximize_entropy: bool,
    /// Upper end of the histogram range. `None` uses the observed maximum.
    pub histogram_range: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            exposure_base: DEFAULT_EXPOSURE_BASE,
            lambda_ex: 1.0,
            lambda_en: 1e-4,
            lambda_con: 0.1,
            lambda_tv: 1e-5,
            bins: 256,
            patch_grid: (4, 4),
            histogram: HistogramMode::Soft,
            maximize_entropy: false,
            histogram_range: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_ex, self.lambda_en, self.lambda_con, self.lambda_tv];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config("loss weights must be finite and nonnegative".into()));
        }
        if !self.exposure_base.is_finite() {
            return Err(Error::Config("exposure base must be finite".into()));
        }
        if self.bins < 2 {
            return Err(Error::Config("histogram needs at least 2 bins".into()));
        }
        if self.patch_grid.0 == 0 || self.patch_grid.1 == 0 {
            return Err(Error::Config("patch grid must be at least 1x1".into()));
        }
        if let Some(r) = self.histogram_range {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config("histogram range must be positive".into()));
            }
        }
        Ok(())
    }

    fn entropy_sign(&self) -> f64 {
        if self.maximize_entropy {
            -1.0
        } else {
            1.0
        }
    }
}

/// Per-term values of the objective (unweighted) and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub exposure: f64,
    pub entropy: f64,
    pub contrast: f64,
    pub tv: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.exposure, self.entropy, self.contrast, self.tv]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `|mean(img) - (E + E_d)|` over all pixels and channels.
pub fn exposure_loss(img: &ImageTensor, base: f64, offset: f64) -> f64 {
    (img.mean() - (base + offset)).abs()
}

pub fn exposure_grad(img: &ImageTensor, base: f64, offset: f64) -> ImageTensor {
    let diff = img.mean() - (base + offset);
    let g = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    img.map(|_| g / img.len() as f64)
}

/// Histogram geometry: `bins` centers spread evenly over `[0, range]`.
struct Binning {
    bins: usize,
    range: f64,
}

impl Binning {
    fn new(values: &[f64], bins: usize, range_max: Option<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if bins < 2 {
            return Err(Error::Config("histogram needs at least 2 bins".into()));
        }
        let range = range_max.unwrap_or_else(|| values.iter().cloned().fold(0.0, f64::max));
        Ok(Self { bins, range })
    }

    /// Continuous bin coordinate in `[0, bins - 1]`.
    #[inline]
    fn position(&self, v: f64) -> f64 {
        if self.range <= 0.0 {
            return 0.0;
        }
        (v / self.range * (self.bins - 1) as f64).clamp(0.0, (self.bins - 1) as f64)
    }

    /// Lower bin and the fraction of mass sent to the bin above it.
    #[inline]
    fn split(&self, t: f64) -> (usize, f64) {
        let j = (t.floor() as usize).min(self.bins - 2);
        (j, t - j as f64)
    }
}

/// Normalized hat-kernel histogram of nonnegative values.
pub fn soft_histogram(values: &[f64], bins: usize, range_max: Option<f64>) -> Result<Vec<f64>> {
    let binning = Binning::new(values, bins, range_max)?;
    let mut p = vec![0.0; bins];
    let w = 1.0 / values.len() as f64;
    for &v in values {
        let (j, f) = binning.split(binning.position(v));
        p[j] += (1.0 - f) * w;
        p[j + 1] += f * w;
    }
    Ok(p)
}

/// Normalized nearest-center histogram.
pub fn hard_histogram(values: &[f64], bins: usize, range_max: Option<f64>) -> Result<Vec<f64>> {
    let binning = Binning::new(values, bins, range_max)?;
    let mut p = vec![0.0; bins];
    let w = 1.0 / values.len() as f64;
    for &v in values {
        let j = (binning.position(v) + 0.5).floor() as usize;
        p[j.min(bins - 1)] += w;
    }
    Ok(p)
}

/// Shannon entropy in nats, `0 · ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|&q| q * q.ln()).sum::<f64>()
}

fn histogram(values: &[f64], cfg: &LossConfig) -> Result<Vec<f64>> {
    match cfg.histogram {
        HistogramMode::Soft => soft_histogram(values, cfg.bins, cfg.histogram_range),
        HistogramMode::Hard => hard_histogram(values, cfg.bins, cfg.histogram_range),
    }
}

/// Entropy of the histogram of the channel-mean structure map.
pub fn entropy_loss(s_phase: &ImageTensor, cfg: &LossConfig) -> Result<f64> {
    let intensity = s_phase.channel_mean();
    Ok(entropy(&histogram(intensity.data(), cfg)?))
}

/// Gradient of [`entropy_loss`] (soft mode, unsigned) with respect to
/// `s_phase`. With an observed range the maximum itself is differentiated.
pub fn entropy_grad(s_phase: &ImageTensor, cfg: &LossConfig) -> Result<ImageTensor> {
    if cfg.histogram != HistogramMode::Soft {
        return Err(Error::Config("entropy gradient requires the soft histogram".into()));
    }
    let intensity = s_phase.channel_mean();
    let values = intensity.data();
    let binning = Binning::new(values, cfg.bins, cfg.histogram_range)?;
    let p = soft_histogram(values, cfg.bins, cfg.histogram_range)?;
    let dl_dp: Vec<f64> = p
        .iter()
        .map(|&q| if q > 0.0 { -(q.ln() + 1.0) } else { 0.0 })
        .collect();

    let n = values.len() as f64;
    let mut g = vec![0.0; values.len()];
    if binning.range <= 0.0 {
        return Ok(spread_channels(s_phase, &g));
    }
    let scale = (cfg.bins - 1) as f64 / binning.range;
    let mut g_range = 0.0;
    for (i, &v) in values.iter().enumerate() {
        let raw_t = v * scale;
        if cfg.histogram_range.is_some() && raw_t > (cfg.bins - 1) as f64 {
            continue;
        }
        let t = binning.position(v);
        let (j, _) = binning.split(t);
        let dl_dt = (dl_dp[j + 1] - dl_dp[j]) / n;
        g[i] += dl_dt * scale;
        g_range -= dl_dt * t / binning.range;
    }
    if cfg.histogram_range.is_none() {
        // d max / d v is 1 at the first maximal sample
        let argmax = values
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > values[best] { i } else { best });
        g[argmax] += g_range;
    }
    Ok(spread_channels(s_phase, &g))
}

/// Distributes a gradient on the channel mean back to every channel.
fn spread_channels(like: &ImageTensor, g_mean: &[f64]) -> ImageTensor {
    let c = like.channels();
    let scale = 1.0 / c as f64;
    let mut out = like.map(|_| 0.0);
    for ch in 0..c {
        for (o, &g) in out.plane_mut(ch).iter_mut().zip(g_mean) {
            *o = g * scale;
        }
    }
    out
}

/// Row or column boundaries of a `parts`-way split; the last part absorbs
/// the remainder.
fn splits(len: usize, parts: usize) -> Vec<(usize, usize)> {
    let step = len / parts;
    (0..parts)
        .map(|k| (k * step, if k + 1 == parts { len } else { (k + 1) * step }))
        .collect()
}

/// Half-open `(rows, cols)` ranges of one patch.
type PatchBounds = ((usize, usize), (usize, usize));

fn patches(img: &ImageTensor, grid: (usize, usize)) -> Result<Vec<PatchBounds>> {
    let (h, w) = (img.height(), img.width());
    let min = grid.0.max(grid.1);
    if h < grid.0 || w < grid.1 {
        return Err(Error::ImageTooSmall { height: h, width: w, min });
    }
    let rows = splits(h, grid.0);
    let cols = splits(w, grid.1);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

/// `-(1/N) Σ_k σ²(patch_k)` with population variance over the channel mean.
pub fn contrast_loss(s_phase: &ImageTensor, cfg: &LossConfig) -> Result<f64> {
    let intensity = s_phase.channel_mean();
    let patches = patches(&intensity, cfg.patch_grid)?;
    let mut total = 0.0;
    for &((r0, r1), (c0, c1)) in &patches {
        let (mean, count) = patch_mean(&intensity, (r0, r1), (c0, c1));
        let mut var = 0.0;
        for i in r0..r1 {
            for j in c0..c1 {
                let d = intensity.get(i, j, 0) - mean;
                var += d * d;
            }
        }
        total += var / count;
    }
    Ok(-total / patches.len() as f64)
}

/// Patch mean accumulated relative to the first pixel, so a constant patch
/// yields its value exactly and a variance of exactly zero.
fn patch_mean(img: &ImageTensor, rows: (usize, usize), cols: (usize, usize)) -> (f64, f64) {
    let origin = img.get(rows.0, cols.0, 0);
    let mut sum = 0.0;
    for i in rows.0..rows.1 {
        for j in cols.0..cols.1 {
            sum += img.get(i, j, 0) - origin;
        }
    }
    let count = ((rows.1 - rows.0) * (cols.1 - cols.0)) as f64;
    (origin + sum / count, count)
}

pub fn contrast_grad(s_phase: &ImageTensor, cfg: &LossConfig) -> Result<ImageTensor> {
    let intensity = s_phase.channel_mean();
    let patches = patches(&intensity, cfg.patch_grid)?;
    let n_patches = patches.len() as f64;
    let mut g = vec![0.0; intensity.len()];
    for &((r0, r1), (c0, c1)) in &patches {
        let (mean, count) = patch_mean(&intensity, (r0, r1), (c0, c1));
        for i in r0..r1 {
            for j in c0..c1 {
                let idx = intensity.index(i, j, 0);
                g[idx] = -2.0 * (intensity.data()[idx] - mean) / (count * n_patches);
            }
        }
    }
    Ok(spread_channels(s_phase, &g))
}

fn check_tv_size(img: &ImageTensor) -> Result<()> {
    if img.height() < 2 || img.width() < 2 {
        return Err(Error::ImageTooSmall {
            height: img.height(),
            width: img.width(),
            min: 2,
        });
    }
    Ok(())
}

/// Anisotropic total variation, summed over channels, unnormalized.
pub fn tv_loss(img: &ImageTensor) -> Result<f64> {
    check_tv_size(img)?;
    let (h, w, c) = img.dims();
    let mut total = 0.0;
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let v = img.get(i, j, ch);
                if i + 1 < h {
                    total += (img.get(i + 1, j, ch) - v).abs();
                }
                if j + 1 < w {
                    total += (img.get(i, j + 1, ch) - v).abs();
                }
            }
        }
    }
    Ok(total)
}

pub fn tv_grad(img: &ImageTensor) -> Result<ImageTensor> {
    check_tv_size(img)?;
    let (h, w, c) = img.dims();
    let mut g = img.map(|_| 0.0);
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let idx = img.index(i, j, ch);
                let v = img.data()[idx];
                if i + 1 < h {
                    let nidx = img.index(i + 1, j, ch);
                    let s = sign(img.data()[nidx] - v);
                    g.data_mut()[nidx] += s;
                    g.data_mut()[idx] -= s;
                }
                if j + 1 < w {
                    let nidx = img.index(i, j + 1, ch);
                    let s = sign(img.data()[nidx] - v);
                    g.data_mut()[nidx] += s;
                    g.data_mut()[idx] -= s;
                }
            }
        }
    }
    Ok(g)
}

/// Weighted sum of the four terms plus the breakdown.
pub fn total_loss(
    x_out: &ImageTensor,
    s_phase: &ImageTensor,
    exposure_offset: f64,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let exposure = exposure_loss(x_out, cfg.exposure_base, exposure_offset);
    let entropy = entropy_loss(s_phase, cfg)?;
    let contrast = contrast_loss(s_phase, cfg)?;
    let tv = tv_loss(x_out)?;
    Ok(combine(exposure, entropy, contrast, tv, cfg))
}

pub fn combine(exposure: f64, entropy: f64, contrast: f64, tv: f64, cfg: &LossConfig) -> LossBreakdown {
    LossBreakdown {
        total: cfg.lambda_ex * exposure
            + cfg.entropy_sign() * cfg.lambda_en * entropy
            + cfg.lambda_con * contrast
            + cfg.lambda_tv * tv,
        exposure,
        entropy,
        contrast,
        tv,
    }
}

/// Gradients of [`total_loss`] with respect to `x_out` and `s_phase`.
/// Terms with zero weight contribute exactly zero.
pub fn total_grad(
    x_out: &ImageTensor,
    s_phase: &ImageTensor,
    exposure_offset: f64,
    cfg: &LossConfig,
) -> Result<(ImageTensor, ImageTensor)> {
    let mut gx = x_out.map(|_| 0.0);
    let mut gs = s_phase.map(|_| 0.0);
    let add = |dst: &mut ImageTensor, src: &ImageTensor, w: f64| {
        for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
            *d += w * s;
        }
    };
    if cfg.lambda_ex != 0.0 {
        add(&mut gx, &exposure_grad(x_out, cfg.exposure_base, exposure_offset), cfg.lambda_ex);
    }
    if cfg.lambda_tv != 0.0 {
        add(&mut gx, &tv_grad(x_out)?, cfg.lambda_tv);
    }
    if cfg.lambda_en != 0.0 {
        add(&mut gs, &entropy_grad(s_phase, cfg)?, cfg.entropy_sign() * cfg.lambda_en);
    }
    if cfg.lambda_con != 0.0 {
        add(&mut gs, &contrast_grad(s_phase, cfg)?, cfg.lambda_con);
    }
    Ok((gx, gs))
}
