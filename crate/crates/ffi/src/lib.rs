//! C interface to the phaselux pipeline.
//!
//! Every fallible function returns a [`PlxStatus`]. On failure a description
//! is stored per thread and can be read with [`plx_last_error`]. Objects are
//! handed out as opaque pointers and must be released with the matching
//! `*_free` function. Images cross the boundary as interleaved `double`
//! arrays (`height * width * channels`, channel fastest) with values nominally
//! in `[0, 1]`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use phaselux::config::RunConfig;
use phaselux::degrade::{self, DegradationConfig};
use phaselux::vicm::{PerceptualScores, ScoreSource};
use phaselux::{cli, io, optimize, Error, ImageTensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlxStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid configuration, score, kernel or argument value.
    Config = 2,
    /// File could not be read, written or decoded.
    Io = 3,
    /// The optimizer produced a non-finite loss or gradient.
    Nonfinite = 4,
    /// Image dimensions are invalid or do not match.
    Shape = 5,
    /// A string argument was not valid UTF-8.
    Utf8 = 6,
    /// An internal error was caught at the boundary.
    Panic = 7,
    /// Any other failure.
    Failure = 8,
}

/// Opaque image handle.
pub struct PlxImage {
    inner: ImageTensor,
}

/// Opaque run-configuration handle.
pub struct PlxConfig {
    inner: RunConfig,
}

/// Outcome of [`plx_enhance`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PlxEnhanceSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_exposure: f64,
    pub final_entropy: f64,
    pub final_contrast: f64,
    pub final_tv: f64,
    pub n_v: usize,
    pub exposure_offset: f64,
    pub strength: f64,
    pub steps: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).expect("nul bytes removed"));
}

fn status_of(err: &Error) -> PlxStatus {
    match cli::exit_code(err) {
        cli::EXIT_CONFIG => PlxStatus::Config,
        cli::EXIT_IO => PlxStatus::Io,
        cli::EXIT_NONFINITE => PlxStatus::Nonfinite,
        _ => match err {
            Error::ShapeMismatch { .. } | Error::InvalidDims { .. } | Error::ImageTooSmall { .. } => PlxStatus::Shape,
            _ => PlxStatus::Failure,
        },
    }
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and a stored message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PlxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PlxStatus::Ok
        }
        Ok(Err(Fail::Null(name))) => {
            set_last_error(&format!("{name} is null"));
            PlxStatus::NullPointer
        }
        Ok(Err(Fail::Utf8(name))) => {
            set_last_error(&format!("{name} is not valid UTF-8"));
            PlxStatus::Utf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal error: {msg}"));
            PlxStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(name))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

unsafe fn c_str<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(name))
}

fn boxed_image(img: ImageTensor) -> *mut PlxImage {
    Box::into_raw(Box::new(PlxImage { inner: img }))
}

/// Message describing the last failure on the calling thread, or an empty
/// string. The pointer stays valid until the next call into this library on
/// the same thread.
#[no_mangle]
pub extern "C" fn plx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn plx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an image from `height * width * channels` interleaved values.
/// `channels` must be 1 or 3 and every value finite.
#[no_mangle]
pub unsafe extern "C" fn plx_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut PlxImage,
) -> PlxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        if !(channels == 1 || channels == 3) {
            return Err(Error::InvalidDims { height, width, channels }.into());
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or(Error::InvalidDims { height, width, channels })?;
        let values = std::slice::from_raw_parts(data, len);
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("pixel value {bad} is not finite")).into());
        }
        *out = boxed_image(ImageTensor::from_interleaved(height, width, channels, values)?);
        Ok(())
    })
}

/// Releases an image. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn plx_image_free(img: *mut PlxImage) {
    if !img.is_null() {
        drop(Box::from_raw(img));
    }
}

#[no_mangle]
pub unsafe extern "C" fn plx_image_dims(
    img: *const PlxImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> PlxStatus {
    guard(|| {
        let img = deref(img, "img")?;
        let (h, w, c) = img.inner.dims();
        *out_ptr(height, "height")? = h;
        *out_ptr(width, "width")? = w;
        *out_ptr(channels, "channels")? = c;
        Ok(())
    })
}

/// Copies the pixels, interleaved, into `buf`, which must hold exactly
/// `height * width * channels` values.
#[no_mangle]
pub unsafe extern "C" fn plx_image_copy(img: *const PlxImage, buf: *mut f64, len: usize) -> PlxStatus {
    guard(|| {
        let img = deref(img, "img")?;
        if buf.is_null() {
            return Err(Fail::Null("buf"));
        }
        if len != img.inner.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} values", img.inner.len()),
                actual: format!("{len} values"),
            }
            .into());
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&img.inner.to_interleaved());
        Ok(())
    })
}

/// Reads an 8-bit PNG, PGM or PPM file.
#[no_mangle]
pub unsafe extern "C" fn plx_image_load(path: *const c_char, out: *mut *mut PlxImage) -> PlxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let path = c_str(path, "path")?;
        *out = boxed_image(io::read_image(Path::new(path))?);
        Ok(())
    })
}

/// Writes an image; the format follows the file extension.
#[no_mangle]
pub unsafe extern "C" fn plx_image_save(img: *const PlxImage, path: *const c_char) -> PlxStatus {
    guard(|| {
        let img = deref(img, "img")?;
        let path = c_str(path, "path")?;
        io::write_image(Path::new(path), &img.inner)?;
        Ok(())
    })
}

/// Default configuration.
#[no_mangle]
pub unsafe extern "C" fn plx_config_default(out: *mut *mut PlxConfig) -> PlxStatus {
    guard(|| {
        *out_ptr(out, "out")? = Box::into_raw(Box::new(PlxConfig {
            inner: RunConfig::default(),
        }));
        Ok(())
    })
}

/// Parses a flat JSON configuration with dotted keys. Unknown keys fail.
#[no_mangle]
pub unsafe extern "C" fn plx_config_from_json(json: *const c_char, out: *mut *mut PlxConfig) -> PlxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let text = c_str(json, "json")?;
        *out = Box::into_raw(Box::new(PlxConfig {
            inner: RunConfig::from_json(text)?,
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn plx_config_free(cfg: *mut PlxConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn config_or_default(cfg: *const PlxConfig) -> RunConfig {
    // SAFETY: callers pass either null or a pointer from plx_config_*.
    unsafe { cfg.as_ref() }.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Applies `clamp(gamma * (img * k) + noise, 0, 1)`. `kernel` is `delta`,
/// `gaussian:SIZE:SIGMA` or `motion:LENGTH:ANGLE_DEG`.
#[no_mangle]
pub unsafe extern "C" fn plx_degrade(
    img: *const PlxImage,
    gamma: f64,
    kernel: *const c_char,
    noise_sigma: f64,
    seed: u64,
    out: *mut *mut PlxImage,
) -> PlxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let img = deref(img, "img")?;
        let cfg = DegradationConfig {
            gamma,
            kernel: cli::parse_kernel(c_str(kernel, "kernel")?)?,
            noise_sigma,
            seed,
        };
        *out = boxed_image(degrade::degrade(&img.inner, &cfg)?);
        Ok(())
    })
}

/// PSNR in dB with peak 1. Identical images give `+inf`.
#[no_mangle]
pub unsafe extern "C" fn plx_psnr(a: *const PlxImage, b: *const PlxImage, out: *mut f64) -> PlxStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        *out_ptr(out, "out")? = degrade::psnr(&a.inner, &b.inner, 1.0)?;
        Ok(())
    })
}

/// Heuristic visibility and blur scores. `cfg` may be null.
#[no_mangle]
pub unsafe extern "C" fn plx_proxy_scores(
    img: *const PlxImage,
    cfg: *const PlxConfig,
    v: *mut f64,
    b: *mut f64,
) -> PlxStatus {
    guard(|| {
        let img = deref(img, "img")?;
        let s = degrade::proxy_scores(&img.inner, &config_or_default(cfg).proxy())?;
        *out_ptr(v, "v")? = s.v;
        *out_ptr(b, "b")? = s.b;
        Ok(())
    })
}

/// Optimizes the pipeline for one image with visibility `v` and blurriness
/// `b`. `cfg` and `summary` may be null.
#[no_mangle]
pub unsafe extern "C" fn plx_enhance(
    img: *const PlxImage,
    cfg: *const PlxConfig,
    v: f64,
    b: f64,
    out: *mut *mut PlxImage,
    summary: *mut PlxEnhanceSummary,
) -> PlxStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let img = deref(img, "img")?;
        let pipeline = config_or_default(cfg).pipeline();
        let scores = PerceptualScores::new(v, b, ScoreSource::File)?;
        let res = optimize::optimize_image(&img.inner, &scores, &pipeline)?;
        if let Some(s) = summary.as_mut() {
            *s = PlxEnhanceSummary {
                initial_loss: res.initial.total,
                final_loss: res.last.total,
                final_exposure: res.last.exposure,
                final_entropy: res.last.entropy,
                final_contrast: res.last.contrast,
                final_tv: res.last.tv,
                n_v: res.params.n_v,
                exposure_offset: res.params.exposure_offset,
                strength: res.params.strength,
                steps: pipeline.optim.steps,
            };
        }
        *out = boxed_image(res.image);
        Ok(())
    })
}
