//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero when any fails.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use phaselux::degrade::{self, DegradationConfig, ProxyConfig};
use phaselux::losses::{self, LossConfig};
use phaselux::optimize::{self, PipelineConfig};
use phaselux::rope::{self, FusionMode, FusionParam, RotaryField, TokenGrid};
use phaselux::spectral::{self, Complex64, Spectrum};
use phaselux::vgpm::{self, NormPhaseMap, PhaseModStack};
use phaselux::vicm::{self, CurveParamStack, EstimatorMode, IterationPolicy, PerceptualScores, ScoreSource};
use phaselux::ImageTensor;

type Check = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in `[lo, hi]` with the endpoints themselves drawn 10% of the time.
fn value_with_edges(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    match r.random_range(0..20) {
        0 => lo,
        1 => hi,
        _ => r.random_range(lo..=hi),
    }
}

fn random_image(r: &mut ChaCha8Rng, h: usize, w: usize, c: usize, lo: f64, hi: f64) -> ImageTensor {
    ImageTensor::from_fn(h, w, c, |_, _, _| value_with_edges(r, lo, hi)).unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

// 1 -------------------------------------------------------------------------

fn curve_boundedness() -> Check {
    let mut r = rng(1001);
    let mut worst = 0.0_f64;
    for _ in 0..1000 {
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let c = if r.random_bool(0.5) { 1 } else { 3 };
        let n = r.random_range(1..=8);
        let x = random_image(&mut r, h, w, c, 0.0, 1.0);
        let constant = r.random_bool(0.3);
        let maps: Vec<ImageTensor> = (0..n)
            .map(|_| {
                if constant {
                    random_image(&mut r, 1, 1, c, -1.0, 1.0)
                } else {
                    random_image(&mut r, h, w, c, -1.0, 1.0)
                }
            })
            .collect();
        let out = vicm::apply_curves(&x, &CurveParamStack::new(maps.clone()).unwrap()).unwrap();
        ensure!(
            out.data().iter().all(|v| (0.0..=1.0).contains(v)),
            "output left [0, 1]"
        );

        // x plus the sum of every increment, each taken at the previous state
        let mut summed = Vec::with_capacity(x.len());
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    let x0 = x.get(i, j, ch);
                    let mut total_increment = 0.0;
                    let mut prev = x0;
                    for a_map in &maps {
                        let a = a_map.get_broadcast(i, j, ch);
                        total_increment += a * prev * (1.0 - prev);
                        prev = x0 + total_increment;
                    }
                    summed.push(x0 + total_increment);
                }
            }
        }
        worst = worst.max(max_abs_diff(out.data(), &summed));
    }
    ensure!(worst <= 1e-9, "summed form differs from the recursion by {worst:.3e}");
    Ok(format!("1000 trials, max |recursion - summed| = {worst:.2e}"))
}

// 2 -------------------------------------------------------------------------

fn truncation() -> Check {
    let mut r = rng(2002);
    let mut worst = 0.0_f64;
    let mut identity_trials = 0;
    for _ in 0..500 {
        let (h, w, c) = (r.random_range(1..=5), r.random_range(1..=5), 3);
        let x = random_image(&mut r, h, w, c, 0.0, 1.0);
        let maps: Vec<ImageTensor> = (0..8).map(|_| random_image(&mut r, h, w, c, -1.0, 1.0)).collect();
        let stack = CurveParamStack::new(maps.clone()).unwrap();
        let n_v = r.random_range(0..=8);
        let masked = vicm::apply_curves(&x, &vicm::mask_curves(&stack, n_v).unwrap()).unwrap();
        if n_v == 0 {
            identity_trials += 1;
            let exact = masked.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            ensure!(exact, "n_v = 0 is not the exact identity");
        } else {
            let short = CurveParamStack::new(maps[..n_v].to_vec()).unwrap();
            let direct = vicm::apply_curves(&x, &short).unwrap();
            worst = worst.max(max_abs_diff(masked.data(), direct.data()));
        }
    }
    ensure!(worst <= 1e-12, "masked and shortened stacks differ by {worst:.3e}");
    ensure!(identity_trials > 0, "no n_v = 0 trial was drawn");
    Ok(format!("500 stacks ({identity_trials} with n_v = 0), max diff {worst:.1e}"))
}

// 3 -------------------------------------------------------------------------

fn vgpm_properties() -> Check {
    let mut r = rng(3003);
    for trial in 0..10_000 {
        let (h, w, c) = (r.random_range(1..=4), r.random_range(1..=4), r.random_range(1..=3));
        let np = NormPhaseMap(random_image(&mut r, h, w, c, 0.0, 1.0));
        let t_total = r.random_range(1..=8);
        let maps: Vec<ImageTensor> = (0..t_total).map(|_| random_image(&mut r, h, w, c, 0.0, 1.0)).collect();
        let s = value_with_edges(&mut r, 0.0, 1.0);
        for t in 1..=t_total {
            let stack = PhaseModStack::new(maps[..t].to_vec(), s).unwrap();
            let m_t = vgpm::modulate_phase(&np, &stack).unwrap();
            ensure!(
                m_t.0.data().iter().all(|v| (0.0..=1.0).contains(v)),
                "trial {trial}: M_{t} left [0, 1]"
            );
        }
    }

    let mut identity_err = 0.0_f64;
    let mut magnitude_err = 0.0_f64;
    for (h, w, c) in [(16, 16, 1), (7, 9, 3), (8, 12, 3), (5, 5, 1)] {
        let img = random_image(&mut r, h, w, c, 0.0, 1.0);

        let zero = PhaseModStack::constant(8, 0.0, 1.0).unwrap();
        let out = vgpm::vgpm_apply(&img, &zero).unwrap();
        identity_err = identity_err.max(max_abs_diff(out.image.data(), img.data()));

        let maps: Vec<ImageTensor> = (0..8).map(|_| random_image(&mut r, h, w, c, 0.0, 1.0)).collect();
        let stack = PhaseModStack::new(maps, 1.0).unwrap();
        let sharp = vgpm::vgpm_apply_scored(&img, &stack, 0.0, 1.0).unwrap();
        identity_err = identity_err.max(max_abs_diff(sharp.image.data(), img.data()));

        let modulated = vgpm::vgpm_apply(&img, &stack).unwrap();
        let before = spectral::fft2(&img);
        let after = spectral::fft2(&modulated.pre_clamp);
        let peak = before.data().iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in after.data().iter().zip(before.data()) {
            let rel = (a.norm() - b.norm()).abs() / b.norm().max(1e-9 * peak);
            magnitude_err = magnitude_err.max(rel);
        }
    }
    ensure!(identity_err <= 1e-6, "identity error {identity_err:.3e}");
    ensure!(magnitude_err <= 1e-6, "magnitude changed by {magnitude_err:.3e} relative");
    Ok(format!(
        "10^4 trials bounded, identity err {identity_err:.1e}, magnitude rel err {magnitude_err:.1e}"
    ))
}

// 4 -------------------------------------------------------------------------

fn direct_dft(plane: &[Complex64], h: usize, w: usize, inverse: bool) -> Vec<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let scale = if inverse { 1.0 / (h * w) as f64 } else { 1.0 };
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for x in 0..h {
                for y in 0..w {
                    let angle = sign * 2.0 * PI * ((u * x) as f64 / h as f64 + (v * y) as f64 / w as f64);
                    acc += plane[x * w + y] * Complex64::from_polar(1.0, angle);
                }
            }
            out[u * w + v] = acc * scale;
        }
    }
    out
}

fn max_complex_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn spectral_correctness() -> Check {
    let sizes = [4, 7, 8, 12, 16];
    let mut r = rng(4004);
    let (mut round_trip, mut parseval, mut forward, mut inverse) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for &h in &sizes {
        for &w in &sizes {
            let c = 2;
            let img = random_image(&mut r, h, w, c, 0.0, 1.0);
            let spec = spectral::fft2(&img);
            let back = spectral::ifft2(&spec).unwrap();
            round_trip = round_trip.max(max_abs_diff(back.data(), img.data()));

            let energy: f64 = img.data().iter().map(|v| v * v).sum();
            let spec_energy: f64 = spec.data().iter().map(|z| z.norm_sqr()).sum::<f64>() / (h * w) as f64;
            parseval = parseval.max((energy - spec_energy).abs() / energy);

            for ch in 0..c {
                let plane: Vec<Complex64> = img.plane(ch).iter().map(|&v| Complex64::new(v, 0.0)).collect();
                forward = forward.max(max_complex_diff(spec.plane(ch), &direct_dft(&plane, h, w, false)));
            }

            let data: Vec<Complex64> = (0..h * w * c)
                .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
                .collect();
            let arbitrary = Spectrum::new(h, w, c, data).unwrap();
            let inv = spectral::ifft2_complex(&arbitrary);
            for ch in 0..c {
                inverse = inverse.max(max_complex_diff(inv.plane(ch), &direct_dft(arbitrary.plane(ch), h, w, true)));
            }
        }
    }
    ensure!(round_trip <= 1e-6, "round trip error {round_trip:.3e}");
    ensure!(parseval <= 1e-6, "Parseval relative error {parseval:.3e}");
    ensure!(forward <= 1e-9, "forward transform differs from direct sum by {forward:.3e}");
    ensure!(inverse <= 1e-9, "inverse transform differs from direct sum by {inverse:.3e}");
    Ok(format!(
        "25 size pairs, round trip {round_trip:.1e}, Parseval {parseval:.1e}, fwd {forward:.1e}, inv {inverse:.1e}"
    ))
}

// 5 -------------------------------------------------------------------------

fn rotation_error(field: &RotaryField) -> f64 {
    field
        .blocks()
        .iter()
        .map(|&[a, b, c, d]| {
            let orth = [a * a + c * c - 1.0, b * b + d * d - 1.0, a * b + c * d];
            let det = a * d - b * c - 1.0;
            orth.iter().chain([det].iter()).map(|v| v.abs()).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn bit_equal(a: &RotaryField, b: &RotaryField) -> bool {
    a.blocks().len() == b.blocks().len()
        && a.blocks()
            .iter()
            .zip(b.blocks())
            .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()))
}

fn rope_properties() -> Check {
    let (n, channels, heads) = (8, 8, 2);
    let mut r = rng(5005);
    let prev = TokenGrid::from_fn(4, 4, channels, |_, _, _| r.random_range(-1.0..1.0)).unwrap();
    let angles = rope::phase_angles(&prev, n, n).unwrap();
    let freq = rope::build_frequency_rope(&angles, channels).unwrap();
    let spa = rope::build_spatial_rope(n, n, n, n, channels, rope::DEFAULT_ROPE_BASE).unwrap();
    let angle_fused = rope::fuse_rope(&freq, &spa, &FusionParam::from_lambda(0.3).unwrap(), FusionMode::Angle).unwrap();
    let orth = rotation_error(&freq).max(rotation_error(&spa)).max(rotation_error(&angle_fused));
    ensure!(orth <= 1e-9, "rotation blocks deviate from SO(2) by {orth:.3e}");

    // one query vector and one key vector shared by every token, so logits
    // can only depend on where the tokens sit
    let q_vec: Vec<f64> = (0..channels).map(|_| r.random_range(-1.0..1.0)).collect();
    let k_vec: Vec<f64> = (0..channels).map(|_| r.random_range(-1.0..1.0)).collect();
    let q = TokenGrid::from_fn(n, n, channels, |_, _, ch| q_vec[ch]).unwrap();
    let k = TokenGrid::from_fn(n, n, channels, |_, _, ch| k_vec[ch]).unwrap();
    let logits = rope::attention_logits(&q, &k, &spa, heads).unwrap();
    let mut spread = 0.0_f64;
    for head in &logits {
        let mut groups: HashMap<(i64, i64), (f64, f64)> = HashMap::new();
        for m in 0..n * n {
            for t in 0..n * n {
                let key = ((t / n) as i64 - (m / n) as i64, (t % n) as i64 - (m % n) as i64);
                let l = head[m * n * n + t];
                let e = groups.entry(key).or_insert((l, l));
                e.0 = e.0.min(l);
                e.1 = e.1.max(l);
            }
        }
        spread = spread.max(groups.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max));
    }
    ensure!(spread <= 1e-6, "logits at equal displacement differ by {spread:.3e}");

    for mode in [FusionMode::Matrix, FusionMode::Angle] {
        let at = |l: f64| rope::fuse_rope(&freq, &spa, &FusionParam::from_lambda(l).unwrap(), mode).unwrap();
        ensure!(bit_equal(&at(0.0), &spa), "{mode:?} fusion at 0 differs from the spatial field");
        ensure!(bit_equal(&at(1.0), &freq), "{mode:?} fusion at 1 differs from the frequency field");
    }
    Ok(format!(
        "SO(2) err {orth:.1e}, relative-position spread {spread:.1e} over 64x64 pairs, endpoints bit-exact"
    ))
}

// 6 -------------------------------------------------------------------------

fn loss_analytics() -> Check {
    let mut r = rng(6006);
    for bins in [2usize, 8, 64, 256] {
        let centers: Vec<f64> = (0..bins).map(|k| k as f64 / (bins - 1) as f64).collect();
        let p = losses::soft_histogram(&centers, bins, None).unwrap();
        let h = losses::entropy(&p);
        ensure!((h - (bins as f64).ln()).abs() <= 1e-9, "uniform entropy for B = {bins} is {h}");
    }

    for _ in 0..300 {
        let (h, w, c) = (r.random_range(2..=9), r.random_range(2..=9), r.random_range(1..=3));
        let levels: Vec<f64> = (0..c).map(|_| r.random_range(0.0..1.0)).collect();
        let mut img = ImageTensor::from_fn(h, w, c, |_, _, ch| levels[ch]).unwrap();
        ensure!(losses::tv_loss(&img).unwrap() == 0.0, "constant image has nonzero TV");
        let (i, j, ch) = (r.random_range(0..h), r.random_range(0..w), r.random_range(0..c));
        img.set(i, j, ch, levels[ch] + r.random_range(1e-6..0.5));
        ensure!(losses::tv_loss(&img).unwrap() > 0.0, "nonconstant image has zero TV");
    }

    let cfg = LossConfig::default();
    for _ in 0..300 {
        let (h, w, c) = (r.random_range(4..=12), r.random_range(4..=12), r.random_range(1..=3));
        let img = random_image(&mut r, h, w, c, 0.0, 1.0);
        let l = losses::contrast_loss(&img, &cfg).unwrap();
        ensure!(l <= 0.0, "contrast loss {l} is positive");
    }

    let mut sum_err = 0.0_f64;
    for _ in 0..300 {
        let len = r.random_range(1..=200);
        let values: Vec<f64> = (0..len).map(|_| r.random_range(0.0..3.0)).collect();
        let bins = r.random_range(2..=300);
        let range = match r.random_range(0..3) {
            0 => None,
            1 => Some(r.random_range(0.5..5.0)),
            _ => Some(values.iter().cloned().fold(0.0, f64::max)),
        };
        let p = losses::soft_histogram(&values, bins, range).unwrap();
        sum_err = sum_err.max((p.iter().sum::<f64>() - 1.0).abs());
    }
    ensure!(sum_err <= 1e-9, "soft histogram mass off by {sum_err:.3e}");

    // hand-computed examples
    let img = ImageTensor::filled(4, 4, 1, 0.2).unwrap();
    ensure!((losses::exposure_loss(&img, 0.45, -0.1) - 0.15).abs() <= 1e-15, "exposure example");
    ensure!(losses::entropy(&[0.5, 0.5]) == 2f64.ln(), "two-bin entropy example");
    let checker = ImageTensor::from_fn(8, 8, 1, |i, j, _| if i < 2 && j < 2 { ((i + j) % 2) as f64 } else { 0.5 }).unwrap();
    let con = losses::contrast_loss(&checker, &cfg).unwrap();
    ensure!(con == -0.015625, "checkerboard contrast example gave {con}");
    let tv_small = ImageTensor::new(2, 2, 1, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    ensure!(losses::tv_loss(&tv_small).unwrap() == 2.0, "2x2 TV example");
    let step = ImageTensor::from_fn(7, 10, 1, |_, j, _| if j < 5 { 0.0 } else { 1.0 }).unwrap();
    ensure!(losses::tv_loss(&step).unwrap() == 7.0, "step-edge TV example");
    let weights = LossConfig {
        lambda_en: 0.1,
        lambda_con: 0.1,
        lambda_tv: 1.0,
        ..LossConfig::default()
    };
    let total = losses::combine(0.1, 0.5, -0.02, 3.0, &weights).total;
    ensure!((total - 3.148).abs() <= 1e-12, "weighted sum example gave {total}");
    let near_centers: Vec<f64> = (0..64).map(|_| r.random_range(0..8) as f64 / 7.0 + r.random_range(-1e-6..1e-6)).collect();
    let near_centers: Vec<f64> = near_centers.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let soft = losses::soft_histogram(&near_centers, 8, Some(1.0)).unwrap();
    let hard = losses::hard_histogram(&near_centers, 8, Some(1.0)).unwrap();
    let count_gap = soft.iter().zip(&hard).map(|(s, h)| (s - h).abs() * 64.0).fold(0.0, f64::max);
    ensure!(count_gap < 1.0, "soft and hard counts differ by {count_gap}");

    Ok(format!(
        "entropy, TV, contrast and mass invariants hold (mass err {sum_err:.1e}); hand examples exact"
    ))
}

// 7 -------------------------------------------------------------------------

fn gradient_oracle() -> Check {
    let cfg = optimize::gradcheck_config();
    let mut summary = Vec::new();
    for seed in [11u64, 12, 13] {
        let (x, params) = optimize::gradcheck_instance(seed, 8, &cfg).map_err(|e| e.to_string())?;
        let mut r = rng(seed ^ 0xA5A5);
        let report = optimize::sampled_gradient_check(&x, &params, &cfg, 20, 1e-4, &mut r).map_err(|e| e.to_string())?;
        let worst = report.max_rel_error();
        ensure!(
            report.passes(1e-4),
            "seed {seed}: {}/{} coordinates checked, max rel err {worst:.3e}",
            report.entries.len(),
            report.requested
        );
        summary.push(format!("seed {seed}: {worst:.1e} ({} screened)", report.screened));
    }
    Ok(format!("20 coordinates per fixture, max rel err {}", summary.join(", ")))
}

// 8 -------------------------------------------------------------------------

fn acceptance_fixture() -> (ImageTensor, ImageTensor) {
    let clean = degrade::test_pattern(32, 32, 1).unwrap();
    let cfg = DegradationConfig {
        gamma: 0.3,
        kernel: degrade::gaussian_kernel(5, 1.0).unwrap(),
        noise_sigma: 0.01,
        seed: 7,
    };
    let low = degrade::degrade(&clean, &cfg).unwrap();
    (clean, low)
}

fn closed_loop() -> Check {
    let (clean, low) = acceptance_fixture();
    let scores = degrade::proxy_scores(&low, &ProxyConfig::default()).map_err(|e| e.to_string())?;
    let cfg = PipelineConfig::default();
    let res = optimize::optimize_image(&low, &scores, &cfg).map_err(|e| e.to_string())?;
    let before = degrade::psnr(&low, &clean, 1.0).unwrap();
    let after = degrade::psnr(&res.image, &clean, 1.0).unwrap();
    let gain = after - before;
    let target = cfg.loss.exposure_base + res.params.exposure_offset;
    let mean_gap = (res.image.mean() - target).abs();
    let detail = format!(
        "v = {:.3}, b = {:.3}, PSNR {before:.3} -> {after:.3} dB (gain {gain:.3} dB), |mean - target| = {mean_gap:.4}, loss {:.4} -> {:.4}",
        scores.v, scores.b, res.initial.total, res.last.total
    );
    ensure!(gain >= 1.0, "{detail}: gain below 1 dB");
    ensure!(mean_gap <= 0.05, "{detail}: exposure target missed");
    ensure!(res.last.total <= res.initial.total, "{detail}: loss increased");
    Ok(detail)
}

// 9 -------------------------------------------------------------------------

fn adaptivity() -> Check {
    let policy = IterationPolicy::default();
    let dark_n = vicm::visibility_to_iterations(0.05, &policy).unwrap();
    let moderate_n = vicm::visibility_to_iterations(0.25, &policy).unwrap();
    ensure!(dark_n == 8, "v = 0.05 gives n_v = {dark_n}");
    ensure!(moderate_n == 6, "v = 0.25 gives n_v = {moderate_n}");

    // optimize constant fields with every map active, then evaluate the same
    // parameters under both truncation depths
    let (_, low) = acceptance_fixture();
    let cfg = PipelineConfig {
        curve_mode: EstimatorMode::ConstantField,
        ..PipelineConfig::default()
    };
    let scores = PerceptualScores::new(0.05, 0.0, ScoreSource::File).unwrap();
    let res = optimize::optimize_image(&low, &scores, &cfg).map_err(|e| e.to_string())?;
    let stack = res.params.curves.stack();
    let brightening = |n_v: usize| {
        let masked = vicm::mask_curves(&stack, n_v).unwrap();
        vicm::apply_curves(&low, &masked).unwrap().mean() - low.mean()
    };
    let (dark, moderate) = (brightening(dark_n), brightening(moderate_n));
    let a: Vec<String> = stack.maps().iter().map(|m| format!("{:.3}", m.data()[0])).collect();
    ensure!(
        dark > moderate,
        "brightening with n_v = 8 is {dark:.4}, with n_v = 6 is {moderate:.4}"
    );
    Ok(format!(
        "n_v = 8 / 6; mean brightening {dark:.4} vs {moderate:.4} with A = [{}]",
        a.join(", ")
    ))
}

// 10 ------------------------------------------------------------------------

fn cli_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, low) = acceptance_fixture();
    let input = dir.path().join("fixture.pgm");
    phaselux::io::write_image(&input, &low).map_err(|e| e.to_string())?;
    let run = |name: &str| -> std::result::Result<(Vec<u8>, Vec<u8>), String> {
        let out = dir.path().join(name).join("out.png");
        std::fs::create_dir_all(out.parent().unwrap()).map_err(|e| e.to_string())?;
        let status = Command::new(env!("CARGO_BIN_EXE_phaselux"))
            .args(["enhance", "--proxy", "--seed", "7", "--out"])
            .arg(&out)
            .arg(&input)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("enhance failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        let read = |p: &Path| std::fs::read(p).map_err(|e| format!("{}: {e}", p.display()));
        Ok((read(&out)?, read(&dir.path().join(name).join("out.trace.csv"))?))
    };
    let (img_a, trace_a) = run("a")?;
    let (img_b, trace_b) = run("b")?;
    ensure!(img_a == img_b, "output images differ");
    ensure!(trace_a == trace_b, "traces differ");
    ensure!(trace_a.iter().filter(|&&b| b == b'\n').count() > 1, "trace is empty");
    Ok(format!(
        "two runs: {} image bytes and {} trace bytes identical",
        img_a.len(),
        trace_a.len()
    ))
}

// ---------------------------------------------------------------------------

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion { id: 1, name: "curve boundedness and equivalence", limit: Some(Duration::from_secs(5)), run: curve_boundedness },
        Criterion { id: 2, name: "truncation semantics", limit: None, run: truncation },
        Criterion { id: 3, name: "phase modulation boundedness and identity", limit: Some(Duration::from_secs(10)), run: vgpm_properties },
        Criterion { id: 4, name: "spectral correctness", limit: None, run: spectral_correctness },
        Criterion { id: 5, name: "rotary embedding properties", limit: None, run: rope_properties },
        Criterion { id: 6, name: "loss analytics", limit: None, run: loss_analytics },
        Criterion { id: 7, name: "gradient oracle", limit: Some(Duration::from_secs(60)), run: gradient_oracle },
        Criterion { id: 8, name: "closed-loop synthetic restoration", limit: Some(Duration::from_secs(120)), run: closed_loop },
        Criterion { id: 9, name: "visibility adaptivity", limit: None, run: adaptivity },
        Criterion { id: 10, name: "CLI determinism", limit: None, run: cli_determinism },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || c.id.to_string() == *f) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(detail), Some(limit)) if elapsed > limit => Err(format!("{detail}; exceeded {limit:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("acceptance {:>2} {tag} {} [{:.2} s]: {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    if failed == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
