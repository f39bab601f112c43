//! Command-line front end. [`run`] parses arguments, dispatches to a
//! subcommand and maps failures to exit codes.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::degrade::{self, DegradationConfig, Kernel};
use crate::error::{Error, Result};
use crate::io::{self, Manifest, PsnrReport, ScoreEcho, ScoreRecord};
use crate::optimize::{self, gradcheck_config, gradcheck_instance, sampled_gradient_check};
use crate::rope::{self, FusionMode, FusionParam, RotaryField, TokenGrid};
use crate::vicm::PerceptualScores;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NONFINITE: i32 = 4;
pub const EXIT_GRADCHECK: i32 = 5;

/// Relative-error threshold of the `gradcheck` command.
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(name = "phaselux", version, about = "Per-image low-light enhancement and deblurring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimize curve and phase fields for an image or every image in a directory.
    Enhance(EnhanceArgs),
    /// Attenuate, blur and add noise to an image.
    Degrade(DegradeArgs),
    /// Write heuristic proxy scores for images.
    Score(ScoreArgs),
    /// Print the PSNR between two images.
    Eval(EvalArgs),
    /// Dump rotary attention logits as CSV.
    RopeDemo(RopeDemoArgs),
    /// Compare the analytic gradient with central differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    /// Image file or directory of images.
    pub input: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Score file with an `id,v,b` header.
    #[arg(long, conflicts_with = "proxy")]
    pub scores: Option<PathBuf>,
    /// Use heuristic proxy scores instead of a score file.
    #[arg(long)]
    pub proxy: bool,
    /// Overrides the `seed` config key. Recorded in the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output image, or output directory when the input is a directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Trace CSV path (single-image mode only).
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Manifest path (single-image mode only).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Clean image; when given, PSNR before and after goes into the manifest.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Worker threads for directory input.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.3)]
    pub gamma: f64,
    /// `delta`, `gaussian:SIZE:SIGMA` or `motion:LENGTH:ANGLE_DEG`.
    #[arg(long, default_value = "gaussian:5:1.0")]
    pub kernel: String,
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Score file to write; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FieldKind {
    Fused,
    Spatial,
    Frequency,
    None,
}

#[derive(Debug, Args)]
pub struct RopeDemoArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid side at the current scale.
    #[arg(long, default_value_t = 4)]
    pub size: usize,
    /// Grid side at the base (finest) scale.
    #[arg(long)]
    pub base_size: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Overrides `rope.lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Overrides `rope.fusion_mode`.
    #[arg(long, value_parser = parse_fusion_mode)]
    pub mode: Option<FusionMode>,
    #[arg(long, value_enum, default_value_t = FieldKind::Fused)]
    pub field: FieldKind,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Pipeline settings; the balanced gradient-check weights when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub size: usize,
    #[arg(long, default_value_t = 20)]
    pub samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub step: f64,
}

fn parse_fusion_mode(s: &str) -> std::result::Result<FusionMode, String> {
    match s {
        "matrix" => Ok(FusionMode::Matrix),
        "angle" => Ok(FusionMode::Angle),
        _ => Err(format!("unknown fusion mode {s:?} (matrix or angle)")),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::ScoreOutOfRange { .. }
        | Error::IterationOutOfRange { .. }
        | Error::InvalidKernelSpec(_)
        | Error::KernelNotNormalized { .. }
        | Error::OddChannels(_)
        | Error::HeadDivisibility { .. } => EXIT_CONFIG,
        Error::Io { .. } | Error::Image { .. } | Error::UnsupportedImage { .. } => EXIT_IO,
        Error::NonfiniteLoss { .. } | Error::NonfiniteGradient => EXIT_NONFINITE,
        _ => EXIT_FAILURE,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Enhance(a) => cmd_enhance(&a, out),
        Command::Degrade(a) => cmd_degrade(&a, out),
        Command::Score(a) => cmd_score(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::RopeDemo(a) => cmd_rope_demo(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

enum ScoreSpec {
    Proxy,
    File(Vec<ScoreRecord>),
}

impl ScoreSpec {
    fn resolve(&self, image_path: &Path, img: &crate::ImageTensor, cfg: &RunConfig) -> Result<PerceptualScores> {
        match self {
            ScoreSpec::Proxy => degrade::proxy_scores(img, &cfg.proxy()),
            ScoreSpec::File(records) => io::lookup_scores(records, image_path)
                .map(|r| r.scores)
                .ok_or_else(|| Error::Config(format!("no scores for {} in the score file", image_path.display()))),
        }
    }
}

struct Job {
    input: PathBuf,
    output: PathBuf,
    trace: PathBuf,
    manifest: PathBuf,
}

fn cmd_enhance(a: &EnhanceArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let spec = match (&a.scores, a.proxy) {
        (_, true) => ScoreSpec::Proxy,
        (Some(path), false) => {
            if !path.is_file() {
                return Err(Error::Config(format!("score file {} not found", path.display())));
            }
            ScoreSpec::File(io::read_scores(path)?)
        }
        (None, false) => return Err(Error::Config("either --scores FILE or --proxy is required".into())),
    };
    if a.jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }

    let jobs = if a.input.is_dir() {
        if a.trace.is_some() || a.manifest.is_some() || a.reference.is_some() {
            return Err(Error::Config(
                "--trace, --manifest and --reference apply to single images only".into(),
            ));
        }
        let out_dir = a
            .out
            .clone()
            .ok_or_else(|| Error::Config("directory input needs --out DIR".into()))?;
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let mut inputs: Vec<PathBuf> = std::fs::read_dir(&a.input)
            .map_err(|e| Error::io(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && io::is_raster_path(p))
            .collect();
        inputs.sort();
        inputs
            .into_iter()
            .map(|input| {
                let output = out_dir.join(input.file_name().expect("listed files have names"));
                Job {
                    trace: with_suffix(&output, ".trace.csv"),
                    manifest: with_suffix(&output, ".manifest.json"),
                    input,
                    output,
                }
            })
            .collect()
    } else {
        let output = a.out.clone().unwrap_or_else(|| {
            let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("png");
            with_suffix(&a.input, &format!(".enhanced.{ext}"))
        });
        vec![Job {
            trace: a.trace.clone().unwrap_or_else(|| with_suffix(&output, ".trace.csv")),
            manifest: a.manifest.clone().unwrap_or_else(|| with_suffix(&output, ".manifest.json")),
            input: a.input.clone(),
            output,
        }]
    };

    let run_one = |job: &Job| enhance_one(job, &cfg, &spec, a.reference.as_deref());
    let results: Vec<Result<String>> = if a.jobs == 1 || jobs.len() < 2 {
        jobs.iter().map(run_one).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<String>>>> =
            jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..a.jobs.min(jobs.len()) {
                s.spawn(|| loop {
                    let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if k >= jobs.len() {
                        break;
                    }
                    *slots[k].lock().expect("slot lock") = Some(run_one(&jobs[k]));
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot lock").expect("every job ran"))
            .collect()
    };
    let multiple = results.len() > 1;
    let mut first_err = None;
    for r in results {
        match r {
            Ok(line) => {
                let _ = writeln!(out, "{line}");
            }
            Err(e) => {
                if multiple {
                    let _ = writeln!(out, "error: {e}");
                }
                first_err.get_or_insert(e);
            }
        }
    }
    match first_err {
        Some(e) => Err(e),
        None => Ok(EXIT_OK),
    }
}

fn enhance_one(job: &Job, cfg: &RunConfig, spec: &ScoreSpec, reference: Option<&Path>) -> Result<String> {
    let x = io::read_image(&job.input)?;
    let scores = spec.resolve(&job.input, &x, cfg)?;
    let pipeline = cfg.pipeline();
    let res = match optimize::optimize_image(&x, &scores, &pipeline) {
        Ok(res) => res,
        Err(Error::NonfiniteLoss { step, trace }) => {
            io::write_text(&job.trace, &trace.to_csv())?;
            return Err(Error::NonfiniteLoss { step, trace });
        }
        Err(e) => return Err(e),
    };
    let final_fwd = optimize::forward(&x, &res.params, &pipeline)?;
    io::write_image(&job.output, &res.image)?;
    io::write_text(&job.trace, &res.trace.to_csv())?;

    let psnr = match reference {
        Some(path) => {
            let clean = io::read_image(path)?;
            // measure what was written, after 8-bit quantization
            let written = io::read_image(&job.output)?;
            let input_db = degrade::psnr(&x, &clean, 1.0)?;
            let output_db = degrade::psnr(&written, &clean, 1.0)?;
            Some(PsnrReport {
                reference: path.to_path_buf(),
                input_db,
                output_db,
                gain_db: output_db - input_db,
            })
        }
        None => None,
    };
    let manifest = Manifest {
        tool: "phaselux",
        version: env!("CARGO_PKG_VERSION"),
        timestamp_unix: io::unix_now(),
        input: job.input.clone(),
        output: job.output.clone(),
        trace: job.trace.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        scores: ScoreEcho::from(&scores),
        n_v: res.params.n_v,
        e_d: res.params.exposure_offset,
        strength: res.params.strength,
        steps: pipeline.optim.steps,
        initial_loss: res.initial,
        final_loss: res.last,
        max_residual_imag: final_fwd.max_imag,
        psnr,
    };
    io::write_text(&job.manifest, &manifest.to_json())?;
    let mut line = format!(
        "{} -> {}: loss {:.6} -> {:.6}, mean {:.4}",
        job.input.display(),
        job.output.display(),
        res.initial.total,
        res.last.total,
        res.image.mean()
    );
    if let Some(p) = &manifest.psnr {
        line.push_str(&format!(", psnr {:.3} -> {:.3} dB", p.input_db, p.output_db));
    }
    Ok(line)
}

pub fn parse_kernel(spec: &str) -> Result<Kernel> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| Error::InvalidKernelSpec(format!("{spec:?}: {s:?} is not a number")))
    };
    match parts.as_slice() {
        ["delta"] => Ok(Kernel::delta()),
        ["gaussian", size, sigma] => {
            let size = size
                .parse::<usize>()
                .map_err(|_| Error::InvalidKernelSpec(format!("{spec:?}: size must be an integer")))?;
            degrade::gaussian_kernel(size, num(sigma)?)
        }
        ["motion", length, angle] => degrade::motion_kernel(num(length)?, num(angle)?),
        _ => Err(Error::InvalidKernelSpec(format!(
            "{spec:?} (expected delta, gaussian:SIZE:SIGMA or motion:LENGTH:ANGLE)"
        ))),
    }
}

fn cmd_degrade(a: &DegradeArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = DegradationConfig {
        gamma: a.gamma,
        kernel: parse_kernel(&a.kernel)?,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    cfg.validate()?;
    let x = io::read_image(&a.input)?;
    let y = degrade::degrade(&x, &cfg)?;
    io::write_image(&a.out, &y)?;
    let _ = writeln!(out, "{} -> {}", a.input.display(), a.out.display());
    Ok(EXIT_OK)
}

fn cmd_score(a: &ScoreArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let records = a
        .inputs
        .iter()
        .map(|path| {
            let img = io::read_image(path)?;
            Ok(ScoreRecord {
                id: path
                    .file_name()
                    .and_then(|s| s.to_str())
                    .unwrap_or_default()
                    .to_string(),
                scores: degrade::proxy_scores(&img, &cfg.proxy())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let text = io::format_scores(&records);
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => {
            let _ = write!(out, "{text}");
        }
    }
    Ok(EXIT_OK)
}

/// PSNR formatted for display: `inf` for identical images.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".into()
    } else {
        format!("{db:.4}")
    }
}

fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let x = io::read_image(&a.a)?;
    let y = io::read_image(&a.b)?;
    let _ = writeln!(out, "{}", format_psnr(degrade::psnr(&x, &y, 1.0)?));
    Ok(EXIT_OK)
}

/// Inputs of the rope demo: a previous-scale grid for the phase field and
/// query/key grids at the current scale, all standard normal.
pub fn rope_demo_grids(seed: u64, size: usize, channels: usize) -> Result<(TokenGrid, TokenGrid, TokenGrid)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |h: usize, w: usize| {
        TokenGrid::from_fn(h, w, channels, |_, _, _| StandardNormal.sample(&mut rng))
    };
    let prev_side = size.div_ceil(2).max(1);
    let prev = draw(prev_side, prev_side)?;
    let q = draw(size, size)?;
    let k = draw(size, size)?;
    Ok((prev, q, k))
}

fn cmd_rope_demo(a: &RopeDemoArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = load_config(a.config.as_deref())?;
    let heads = a.heads.unwrap_or(cfg.rope_heads);
    let lambda = a.lambda.unwrap_or(cfg.rope_lambda);
    let mode = a.mode.unwrap_or(cfg.rope_fusion_mode);
    let seed = a.seed.unwrap_or(cfg.seed);
    let base_size = a.base_size.unwrap_or(a.size);
    if a.size == 0 || base_size == 0 {
        return Err(Error::Config("grid sizes must be at least 1".into()));
    }
    let (prev, q, k) = rope_demo_grids(seed, a.size, a.channels)?;
    let spatial = || rope::build_spatial_rope(a.size, a.size, base_size, base_size, a.channels, cfg.rope_base);
    let frequency = || rope::build_frequency_rope(&rope::phase_angles(&prev, a.size, a.size)?, a.channels);
    let field = match a.field {
        FieldKind::None => RotaryField::identity(a.size, a.size, a.channels)?,
        FieldKind::Spatial => spatial()?,
        FieldKind::Frequency => frequency()?,
        FieldKind::Fused => rope::fuse_rope(&frequency()?, &spatial()?, &FusionParam::from_lambda(lambda)?, mode)?,
    };
    let logits = rope::attention_logits(&q, &k, &field, heads)?;
    let n = q.tokens();
    let mut csv = String::from("head,query,key,logit\n");
    for (h, head) in logits.iter().enumerate() {
        for m in 0..n {
            for t in 0..n {
                csv.push_str(&format!("{h},{m},{t},{}\n", head[m * n + t]));
            }
        }
    }
    match &a.out {
        Some(path) => io::write_text(path, &csv)?,
        None => {
            let _ = write!(out, "{csv}");
        }
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    let cfg = match &a.config {
        Some(path) => RunConfig::load(path)?.pipeline(),
        None => gradcheck_config(),
    };
    if !(a.step > 0.0 && a.step.is_finite()) || a.samples == 0 {
        return Err(Error::Config("--step must be positive and --samples at least 1".into()));
    }
    let (x, params) = gradcheck_instance(a.seed, a.size, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0xA5A5);
    let report = sampled_gradient_check(&x, &params, &cfg, a.samples, a.step, &mut rng)?;
    let _ = writeln!(out, "index,analytic,numeric,rel_error");
    for e in &report.entries {
        let _ = writeln!(out, "{},{:e},{:e},{:e}", e.index, e.analytic, e.numeric, e.rel_error);
    }
    let _ = writeln!(
        out,
        "checked {} of {} coordinates ({} screened as non-smooth)",
        report.entries.len(),
        report.requested,
        report.screened
    );
    let _ = writeln!(out, "max relative error {:e}", report.max_rel_error());
    Ok(if report.passes(GRADCHECK_TOL) {
        EXIT_OK
    } else {
        EXIT_GRADCHECK
    })
}
