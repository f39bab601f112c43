//! Per-image, reference-free optimization of the curve and phase fields.
//!
//! The forward pipeline is `x_lq → curves (masked to n_v) → phase modulation
//! → (x_out, S*_φ) → loss`. Gradients are exact reverse-mode derivatives of
//! that pipeline; [`finite_difference_check`] compares them with central
//! differences of the forward loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{self, LossBreakdown, LossConfig};
use crate::tensor::ImageTensor;
use crate::vgpm::{self, PhaseModStack, DEFAULT_PHASE_STEPS};
use crate::vicm::{
    self, estimate_curves, field_dims, squash_curve_grad, CurveParamStack, CurveParams, EstimatorMode,
    IterationPolicy, PerceptualScores, DEFAULT_CURVE_ITERATIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Consecutive loss increases that trigger halving the learning rate.
    pub patience: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
        }
    }
}

/// Everything the pipeline and optimizer need besides the image and scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub curve_iterations: usize,
    pub curve_mode: EstimatorMode,
    pub curve_per_channel: bool,
    pub phase_steps: usize,
    pub phase_mode: EstimatorMode,
    pub phase_per_channel: bool,
    pub blur_gain: f64,
    pub policy: IterationPolicy,
    pub loss: LossConfig,
    pub optim: OptimConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            curve_iterations: DEFAULT_CURVE_ITERATIONS,
            curve_mode: EstimatorMode::FreeField,
            curve_per_channel: true,
            phase_steps: DEFAULT_PHASE_STEPS,
            phase_mode: EstimatorMode::FreeField,
            phase_per_channel: false,
            blur_gain: 1.0,
            policy: IterationPolicy::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.curve_iterations == 0 || self.phase_steps == 0 {
            return Err(Error::Config("curve and phase step counts must be at least 1".into()));
        }
        if self.policy.n_max > self.curve_iterations {
            return Err(Error::Config(format!(
                "policy n_max {} exceeds curve iterations {}",
                self.policy.n_max, self.curve_iterations
            )));
        }
        if !(0.0..=1.0).contains(&self.blur_gain) {
            return Err(Error::Config("blur gain must lie in [0, 1]".into()));
        }
        if !(0.0..=0.1).contains(&self.policy.offset_gain) {
            return Err(Error::Config("exposure offset gain must lie in [0, 0.1]".into()));
        }
        let o = &self.optim;
        if !(o.lr > 0.0 && o.lr.is_finite()) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("optimizer needs lr > 0 and moment decays in [0, 1)".into()));
        }
        if o.eps <= 0.0 || o.eps.is_nan() || o.patience == 0 {
            return Err(Error::Config("optimizer eps must be positive and patience at least 1".into()));
        }
        if self.loss.histogram == losses::HistogramMode::Hard && self.loss.lambda_en != 0.0 {
            return Err(Error::Config("the optimizer needs the soft histogram when the entropy weight is nonzero".into()));
        }
        self.loss.validate()
    }
}

/// Phase adjustment squashing: `tanh(max(raw, 0))`. Zero raw gives zero
/// adjustment, so a zero-initialized stack is the identity.
#[inline]
pub fn squash_phase(raw: f64) -> f64 {
    raw.max(0.0).tanh()
}

/// Right derivative at 0, so optimization can leave the identity start.
#[inline]
fn squash_phase_grad(raw: f64) -> f64 {
    if raw < 0.0 {
        0.0
    } else {
        let t = raw.tanh();
        1.0 - t * t
    }
}

/// `λ = 1 / (1 + e^{-raw})`.
#[inline]
pub fn squash_fusion(raw: f64) -> f64 {
    1.0 / (1.0 + (-raw).exp())
}

/// Raw trainable parameters and the score-derived constants held fixed
/// during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub curves: CurveParams,
    pub phase_raw: Vec<ImageTensor>,
    /// Rotary fusion coefficient. It does not enter the image pipeline, so
    /// its gradient here is always zero.
    pub fusion_raw: f64,
    pub n_v: usize,
    pub exposure_offset: f64,
    pub strength: f64,
}

impl ParamSet {
    /// Zero-initialized parameters: the pipeline starts as the identity.
    pub fn init(x: &ImageTensor, scores: &PerceptualScores, cfg: &PipelineConfig) -> Result<Self> {
        let curves = estimate_curves(x, cfg.curve_mode, cfg.curve_iterations, cfg.curve_per_channel)?;
        let (h, w, c) = field_dims(cfg.phase_mode, x.height(), x.width(), x.channels(), cfg.phase_per_channel);
        let phase_raw = vec![ImageTensor::zeros(h, w, c)?; cfg.phase_steps];
        Ok(Self {
            curves,
            phase_raw,
            fusion_raw: 0.0,
            n_v: vicm::visibility_to_iterations(scores.v, &cfg.policy)?,
            exposure_offset: vicm::exposure_offset(scores.v, &cfg.policy)?,
            strength: vgpm::blur_to_strength(scores.b, cfg.blur_gain)?,
        })
    }

    /// Squashed curve stack with maps past `n_v` zeroed.
    pub fn curve_stack(&self) -> Result<CurveParamStack> {
        vicm::mask_curves(&self.curves.stack(), self.n_v)
    }

    pub fn phase_stack(&self) -> Result<PhaseModStack> {
        PhaseModStack::new(self.phase_raw.iter().map(|r| r.map(squash_phase)).collect(), self.strength)
    }

    pub fn fusion_lambda(&self) -> f64 {
        squash_fusion(self.fusion_raw)
    }

    /// Number of raw scalars, in [`ParamSet::flatten`] order.
    pub fn len(&self) -> usize {
        self.curves.raw.iter().map(ImageTensor::len).sum::<usize>()
            + self.phase_raw.iter().map(ImageTensor::len).sum::<usize>()
            + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Raw values: curve fields, then phase fields, then the fusion scalar.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for f in self.curves.raw.iter().chain(&self.phase_raw) {
            out.extend_from_slice(f.data());
        }
        out.push(self.fusion_raw);
        out
    }

    pub fn assign(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter vector has the wrong length");
        let mut offset = 0;
        for f in self.curves.raw.iter_mut().chain(self.phase_raw.iter_mut()) {
            let n = f.len();
            f.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        self.fusion_raw = flat[offset];
    }

    /// Index ranges of the curve and phase blocks in the flat layout.
    pub fn block_ranges(&self) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let nc: usize = self.curves.raw.iter().map(ImageTensor::len).sum();
        let np: usize = self.phase_raw.iter().map(ImageTensor::len).sum();
        (0..nc, nc..nc + np)
    }

    fn zeros_like(&self) -> Self {
        let mut g = self.clone();
        g.assign(&vec![0.0; self.len()]);
        g
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub enhanced: ImageTensor,
    /// Clamped output.
    pub x_out: ImageTensor,
    pub pre_clamp: ImageTensor,
    pub s_phase: ImageTensor,
    pub loss: LossBreakdown,
    pub max_imag: f64,
}

pub fn forward(x_lq: &ImageTensor, params: &ParamSet, cfg: &PipelineConfig) -> Result<ForwardOutput> {
    let enhanced = vicm::apply_curves(x_lq, &params.curve_stack()?)?;
    let tape = vgpm::vgpm_forward_taped(&enhanced, &params.phase_stack()?)?;
    let loss = losses::total_loss(&tape.out.pre_clamp, &tape.s_phase, params.exposure_offset, &cfg.loss)?;
    Ok(ForwardOutput {
        enhanced,
        x_out: tape.out.image,
        pre_clamp: tape.out.pre_clamp,
        s_phase: tape.s_phase,
        loss,
        max_imag: tape.out.max_imag,
    })
}

/// Loss and its exact gradient with respect to every raw parameter.
pub fn gradient(x_lq: &ImageTensor, params: &ParamSet, cfg: &PipelineConfig) -> Result<(LossBreakdown, ParamSet)> {
    let curve_stack = params.curve_stack()?;
    let phase_stack = params.phase_stack()?;
    let curve_tape = vicm::apply_curves_taped(x_lq, &curve_stack)?;
    let tape = vgpm::vgpm_forward_taped(curve_tape.output(), &phase_stack)?;
    let loss = losses::total_loss(&tape.out.pre_clamp, &tape.s_phase, params.exposure_offset, &cfg.loss)?;
    let (g_out, g_sphase) = losses::total_grad(&tape.out.pre_clamp, &tape.s_phase, params.exposure_offset, &cfg.loss)?;
    let (g_enh, g_phase) = vgpm::vgpm_backward(&tape, &phase_stack, &g_out, &g_sphase);
    let g_curves = vicm::curves_backward(&curve_tape, &curve_stack, &g_enh);

    let mut grad = params.zeros_like();
    for ((g_raw, g_map), raw) in grad.curves.raw.iter_mut().zip(&g_curves).zip(&params.curves.raw) {
        for ((g, &gm), &r) in g_raw.data_mut().iter_mut().zip(g_map.data()).zip(raw.data()) {
            *g = gm * squash_curve_grad(r);
        }
    }
    for ((g_raw, g_map), raw) in grad.phase_raw.iter_mut().zip(&g_phase).zip(&params.phase_raw) {
        for ((g, &gm), &r) in g_raw.data_mut().iter_mut().zip(g_map.data()).zip(raw.data()) {
            *g = gm * squash_phase_grad(r);
        }
    }
    if grad.flatten().iter().any(|g| !g.is_finite()) {
        return Err(Error::NonfiniteGradient);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    /// Central difference with the requested step.
    pub numeric: f64,
    /// Central difference with half the step, used to judge local smoothness.
    pub numeric_half: f64,
    pub rel_error: f64,
}

impl GradCheckEntry {
    /// The two difference quotients agree, so the loss is smooth across the
    /// stencil and `numeric` is a trustworthy reference.
    pub fn is_smooth(&self) -> bool {
        relative_error(self.numeric, self.numeric_half) <= SMOOTHNESS_TOL
    }
}

/// Gradients smaller than this are compared in absolute terms.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

/// Allowed disagreement between the step-h and step-h/2 central differences.
/// For a smooth loss the gap is three quarters of the step-h truncation error,
/// so a coordinate that passes this screen has a reference accurate to about
/// 3e-5 relative.
pub const SMOOTHNESS_TOL: f64 = 2.5e-5;

/// `|a - n| / max(|a|, |n|, GRADCHECK_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRADCHECK_FLOOR)
}

/// Central differences of the forward loss at the given flat coordinates,
/// compared with the analytic gradient.
pub fn finite_difference_check(
    x_lq: &ImageTensor,
    params: &ParamSet,
    cfg: &PipelineConfig,
    coords: &[usize],
    step: f64,
) -> Result<Vec<GradCheckEntry>> {
    let (_, grad) = gradient(x_lq, params, cfg)?;
    let analytic = grad.flatten();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut loss_at = |flat: &[f64]| -> Result<f64> {
        probe.assign(flat);
        Ok(forward(x_lq, &probe, cfg)?.loss.total)
    };
    let mut central = |index: usize, h: f64| -> Result<f64> {
        let mut shifted = base.clone();
        shifted[index] = base[index] + h;
        let up = loss_at(&shifted)?;
        shifted[index] = base[index] - h;
        let down = loss_at(&shifted)?;
        Ok((up - down) / (2.0 * h))
    };
    coords
        .iter()
        .map(|&index| {
            let numeric = central(index, step)?;
            let numeric_half = central(index, 0.5 * step)?;
            Ok(GradCheckEntry {
                index,
                analytic: analytic[index],
                numeric,
                numeric_half,
                rel_error: relative_error(analytic[index], numeric),
            })
        })
        .collect()
}

/// Outcome of [`sampled_gradient_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Accepted coordinates, in sampling order.
    pub entries: Vec<GradCheckEntry>,
    /// Coordinates drawn but discarded because the loss has a kink or very
    /// high curvature within one step of the point.
    pub screened: usize,
    pub requested: usize,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    /// All requested coordinates were checked and each is within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.entries.len() == self.requested && self.max_rel_error() <= tol
    }
}

/// Draws coordinates alternately from the active curve maps and the phase
/// maps until `samples` smooth ones have been compared. Masked curve maps and
/// the fusion weight are skipped since their gradient is identically zero.
/// Gives up after `50 * samples` draws; the report then holds fewer entries
/// than requested and [`GradCheckReport::passes`] is false.
pub fn sampled_gradient_check<R: rand::Rng>(
    x_lq: &ImageTensor,
    params: &ParamSet,
    cfg: &PipelineConfig,
    samples: usize,
    step: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (curves, phase) = params.block_ranges();
    let map_len = params.curves.raw.first().map_or(0, |m| m.len());
    let active = curves.start..curves.start + map_len * params.n_v;
    let mut report = GradCheckReport { entries: Vec::with_capacity(samples), screened: 0, requested: samples };
    let mut draws = 0;
    while report.entries.len() < samples && draws < 50 * samples {
        let use_curve = !active.is_empty() && draws % 2 == 0;
        let pool = if use_curve || phase.is_empty() { active.clone() } else { phase.clone() };
        if pool.is_empty() {
            break;
        }
        draws += 1;
        let index = rng.random_range(pool);
        let entry = finite_difference_check(x_lq, params, cfg, &[index], step)?[0];
        if entry.is_smooth() {
            report.entries.push(entry);
        } else {
            report.screened += 1;
        }
    }
    Ok(report)
}

/// Pipeline settings for gradient checks: the defaults with loss weights
/// raised so that every term contributes visibly to the gradient of an 8x8
/// instance (`λ_en = 0.1`, `λ_con = 0.1`, `λ_tv = 1e-3`).
pub fn gradcheck_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.loss.lambda_en = 0.1;
    cfg.loss.lambda_con = 0.1;
    cfg.loss.lambda_tv = 1e-3;
    cfg
}

/// Random instance for gradient checks: a `size x size` single-channel image
/// in [0.05, 0.95], scores (0.3, 0.8), curve raws in [-0.8, 0.8] and phase raws
/// in [0.1, 1.2], all drawn from a ChaCha8 stream seeded with `seed`.
pub fn gradcheck_instance(seed: u64, size: usize, cfg: &PipelineConfig) -> Result<(ImageTensor, ParamSet)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let x = ImageTensor::from_fn(size, size, 1, |_, _, _| rng.random_range(0.05..0.95))?;
    let scores = PerceptualScores::new(0.3, 0.8, crate::vicm::ScoreSource::File)?;
    let mut params = ParamSet::init(&x, &scores, cfg)?;
    let (curves, phase) = params.block_ranges();
    let mut flat = params.flatten();
    for v in &mut flat[curves] {
        *v = rng.random_range(-0.8..0.8);
    }
    for v in &mut flat[phase] {
        *v = rng.random_range(0.1..1.2);
    }
    params.assign(&flat);
    Ok((x, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OptTrace {
    pub records: Vec<TraceRecord>,
}

impl OptTrace {
    pub const CSV_HEADER: &'static str = "step,total,l_ex,l_en,l_con,l_tv,grad_norm,lr";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step, r.loss.total, r.loss.exposure, r.loss.entropy, r.loss.contrast, r.loss.tv, r.grad_norm, r.lr
            ));
        }
        out
    }

    pub fn first(&self) -> Option<&TraceRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub image: ImageTensor,
    pub params: ParamSet,
    pub trace: OptTrace,
    pub initial: LossBreakdown,
    pub last: LossBreakdown,
}

/// Adam-style descent from the identity start. The learning rate halves
/// after `patience` consecutive loss increases. The trace has one record per
/// update plus one for the final parameters.
pub fn optimize_image(x_lq: &ImageTensor, scores: &PerceptualScores, cfg: &PipelineConfig) -> Result<OptResult> {
    cfg.validate()?;
    let mut params = ParamSet::init(x_lq, scores, cfg)?;
    let o = cfg.optim;
    let mut flat = params.flatten();
    let mut m = vec![0.0; flat.len()];
    let mut v = vec![0.0; flat.len()];
    let mut lr = o.lr;
    let mut trace = OptTrace::default();
    let mut prev_loss = f64::INFINITY;
    let mut increases = 0;

    for step in 0..=o.steps {
        let (loss, grad) = match gradient(x_lq, &params, cfg) {
            Ok(v) => v,
            Err(Error::NonfiniteGradient) => {
                return Err(Error::NonfiniteLoss {
                    step,
                    trace: Box::new(trace),
                })
            }
            Err(e) => return Err(e),
        };
        let g = grad.flatten();
        let grad_norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        trace.records.push(TraceRecord {
            step,
            loss,
            grad_norm,
            lr,
        });
        if !loss.is_finite() {
            return Err(Error::NonfiniteLoss {
                step,
                trace: Box::new(trace),
            });
        }
        if step == o.steps {
            break;
        }

        if loss.total > prev_loss {
            increases += 1;
            if increases >= o.patience {
                lr *= 0.5;
                increases = 0;
            }
        } else {
            increases = 0;
        }
        prev_loss = loss.total;

        let t = (step + 1) as i32;
        let bc1 = 1.0 - o.beta1.powi(t);
        let bc2 = 1.0 - o.beta2.powi(t);
        for i in 0..flat.len() {
            m[i] = o.beta1 * m[i] + (1.0 - o.beta1) * g[i];
            v[i] = o.beta2 * v[i] + (1.0 - o.beta2) * g[i] * g[i];
            flat[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + o.eps);
        }
        params.assign(&flat);
    }

    let out = forward(x_lq, &params, cfg)?;
    let initial = trace.first().expect("at least one record").loss;
    Ok(OptResult {
        image: out.x_out,
        params,
        initial,
        last: out.loss,
        trace,
    })
}
