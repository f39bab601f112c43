//! Flat key-value run configuration, read from a JSON object whose keys are
//! dotted names such as `"loss.lambda_tv"`. Missing keys take their defaults
//! and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::degrade::ProxyConfig;
use crate::error::{Error, Result};
use crate::losses::{HistogramMode, LossConfig};
use crate::optimize::{OptimConfig, PipelineConfig};
use crate::rope::{FusionMode, DEFAULT_ROPE_BASE};
use crate::vicm::{EstimatorMode, IterationPolicy};

/// What VGPM consumes. Only the curve-enhanced image is available here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VgpmInput {
    #[default]
    Enhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "curves.iterations")]
    pub curve_iterations: usize,
    #[serde(rename = "curves.mode")]
    pub curve_mode: EstimatorMode,
    #[serde(rename = "curves.per_channel")]
    pub curve_per_channel: bool,
    #[serde(rename = "policy.n_max")]
    pub policy_n_max: usize,
    #[serde(rename = "policy.offset_gain")]
    pub policy_offset_gain: f64,

    #[serde(rename = "phase.steps")]
    pub phase_steps: usize,
    #[serde(rename = "phase.mode")]
    pub phase_mode: EstimatorMode,
    #[serde(rename = "phase.per_channel")]
    pub phase_per_channel: bool,
    #[serde(rename = "phase.blur_gain")]
    pub blur_gain: f64,
    #[serde(rename = "vgpm.input")]
    pub vgpm_input: VgpmInput,

    #[serde(rename = "loss.exposure_base")]
    pub exposure_base: f64,
    #[serde(rename = "loss.lambda_ex")]
    pub lambda_ex: f64,
    #[serde(rename = "loss.lambda_en")]
    pub lambda_en: f64,
    #[serde(rename = "loss.lambda_con")]
    pub lambda_con: f64,
    #[serde(rename = "loss.lambda_tv")]
    pub lambda_tv: f64,
    #[serde(rename = "loss.bins")]
    pub bins: usize,
    #[serde(rename = "loss.patch_rows")]
    pub patch_rows: usize,
    #[serde(rename = "loss.patch_cols")]
    pub patch_cols: usize,
    #[serde(rename = "loss.histogram")]
    pub histogram: HistogramMode,
    #[serde(rename = "loss.maximize_entropy")]
    pub maximize_entropy: bool,
    #[serde(rename = "loss.histogram_range")]
    pub histogram_range: Option<f64>,

    #[serde(rename = "optim.steps")]
    pub steps: usize,
    #[serde(rename = "optim.lr")]
    pub lr: f64,
    #[serde(rename = "optim.beta1")]
    pub beta1: f64,
    #[serde(rename = "optim.beta2")]
    pub beta2: f64,
    #[serde(rename = "optim.eps")]
    pub eps: f64,
    #[serde(rename = "optim.patience")]
    pub patience: usize,

    #[serde(rename = "rope.fusion_mode")]
    pub rope_fusion_mode: FusionMode,
    #[serde(rename = "rope.lambda")]
    pub rope_lambda: f64,
    #[serde(rename = "rope.base")]
    pub rope_base: f64,
    #[serde(rename = "rope.heads")]
    pub rope_heads: usize,
    /// Recorded for the manifest; the angle field is always computed from
    /// the channel mean of the previous grid.
    #[serde(rename = "rope.phase_reduction")]
    pub rope_phase_reduction: String,

    #[serde(rename = "proxy.hf_ref")]
    pub proxy_hf_ref: f64,

    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::from_parts(&PipelineConfig::default(), &ProxyConfig::default())
    }
}

impl RunConfig {
    fn from_parts(p: &PipelineConfig, proxy: &ProxyConfig) -> Self {
        Self {
            curve_iterations: p.curve_iterations,
            curve_mode: p.curve_mode,
            curve_per_channel: p.curve_per_channel,
            policy_n_max: p.policy.n_max,
            policy_offset_gain: p.policy.offset_gain,
            phase_steps: p.phase_steps,
            phase_mode: p.phase_mode,
            phase_per_channel: p.phase_per_channel,
            blur_gain: p.blur_gain,
            vgpm_input: VgpmInput::Enhanced,
            exposure_base: p.loss.exposure_base,
            lambda_ex: p.loss.lambda_ex,
            lambda_en: p.loss.lambda_en,
            lambda_con: p.loss.lambda_con,
            lambda_tv: p.loss.lambda_tv,
            bins: p.loss.bins,
            patch_rows: p.loss.patch_grid.0,
            patch_cols: p.loss.patch_grid.1,
            histogram: p.loss.histogram,
            maximize_entropy: p.loss.maximize_entropy,
            histogram_range: p.loss.histogram_range,
            steps: p.optim.steps,
            lr: p.optim.lr,
            beta1: p.optim.beta1,
            beta2: p.optim.beta2,
            eps: p.optim.eps,
            patience: p.optim.patience,
            rope_fusion_mode: FusionMode::Matrix,
            rope_lambda: 0.5,
            rope_base: DEFAULT_ROPE_BASE,
            rope_heads: 2,
            rope_phase_reduction: "channel-mean".into(),
            proxy_hf_ref: proxy.hf_ref,
            seed: 0,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            curve_iterations: self.curve_iterations,
            curve_mode: self.curve_mode,
            curve_per_channel: self.curve_per_channel,
            phase_steps: self.phase_steps,
            phase_mode: self.phase_mode,
            phase_per_channel: self.phase_per_channel,
            blur_gain: self.blur_gain,
            policy: IterationPolicy {
                n_max: self.policy_n_max,
                offset_gain: self.policy_offset_gain,
            },
            loss: LossConfig {
                exposure_base: self.exposure_base,
                lambda_ex: self.lambda_ex,
                lambda_en: self.lambda_en,
                lambda_con: self.lambda_con,
                lambda_tv: self.lambda_tv,
                bins: self.bins,
                patch_grid: (self.patch_rows, self.patch_cols),
                histogram: self.histogram,
                maximize_entropy: self.maximize_entropy,
                histogram_range: self.histogram_range,
            },
            optim: OptimConfig {
                steps: self.steps,
                lr: self.lr,
                beta1: self.beta1,
                beta2: self.beta2,
                eps: self.eps,
                patience: self.patience,
            },
        }
    }

    pub fn proxy(&self) -> ProxyConfig {
        ProxyConfig {
            hf_ref: self.proxy_hf_ref,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if !(0.0..=1.0).contains(&self.rope_lambda) {
            return Err(Error::Config(format!("rope.lambda {} must lie in [0, 1]", self.rope_lambda)));
        }
        if !(self.rope_base > 0.0 && self.rope_base.is_finite()) {
            return Err(Error::Config(format!("rope.base {} must be positive", self.rope_base)));
        }
        if self.rope_heads == 0 {
            return Err(Error::Config("rope.heads must be at least 1".into()));
        }
        if self.rope_phase_reduction != "channel-mean" {
            return Err(Error::Config(format!(
                "rope.phase_reduction {:?} is not supported (only \"channel-mean\")",
                self.rope_phase_reduction
            )));
        }
        if !(self.proxy_hf_ref > 0.0 && self.proxy_hf_ref.is_finite()) {
            return Err(Error::Config(format!("proxy.hf_ref {} must be positive", self.proxy_hf_ref)));
        }
        Ok(())
    }

    /// Parses and validates a JSON document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
