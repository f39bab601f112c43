//! File formats: 8-bit PNG and binary PGM/PPM rasters, score files, and run
//! manifests.
//!
//! Pixels are read as `byte / 255` and written as `round(clamp(x) * 255)`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, ImageReader};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::tensor::ImageTensor;
use crate::vicm::{PerceptualScores, ScoreSource};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Png,
    /// Binary PGM (`P5`) or PPM (`P6`), picked by channel count.
    Pnm,
}

impl RasterFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "png" => Ok(Self::Png),
            "pgm" | "ppm" | "pnm" => Ok(Self::Pnm),
            _ => Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                detail: "expected a .png, .pgm, .ppm or .pnm file".into(),
            }),
        }
    }
}

pub fn is_raster_path(path: &Path) -> bool {
    RasterFormat::from_path(path).is_ok()
}

pub fn to_byte(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f64 {
    b as f64 / 255.0
}

/// Reads an 8-bit grayscale or RGB raster.
pub fn read_image(path: &Path) -> Result<ImageTensor> {
    let decoded = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let (channels, bytes) = match decoded {
        DynamicImage::ImageLuma8(buf) => (1, buf.into_raw()),
        DynamicImage::ImageRgb8(buf) => (3, buf.into_raw()),
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                detail: format!("pixel type {:?} is not 8-bit grayscale or RGB", other.color()),
            })
        }
    };
    let values: Vec<f64> = bytes.into_iter().map(from_byte).collect();
    ImageTensor::from_interleaved(h, w, channels, &values)
}

/// Writes `img` in the format implied by the extension of `path`.
pub fn write_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let format = RasterFormat::from_path(path)?;
    let unsupported = |detail: String| Error::UnsupportedImage {
        path: path.to_path_buf(),
        detail,
    };
    let color = match img.channels() {
        1 => ExtendedColorType::L8,
        3 => ExtendedColorType::Rgb8,
        c => return Err(unsupported(format!("cannot store {c} channels"))),
    };
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if (ext == "pgm" && img.channels() != 1) || (ext == "ppm" && img.channels() != 3) {
        return Err(unsupported(format!("a .{ext} file cannot hold {} channels", img.channels())));
    }
    let bytes: Vec<u8> = img.to_interleaved().into_iter().map(to_byte).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let encoded = match format {
        RasterFormat::Png => PngEncoder::new(&mut out).write_image(&bytes, w, h, color),
        RasterFormat::Pnm => {
            let subtype = if img.channels() == 1 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(&mut out).with_subtype(subtype).write_image(&bytes, w, h, color)
        }
    };
    encoded.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub const SCORE_HEADER: &str = "id,v,b,source";

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub scores: PerceptualScores,
}

/// Parses a score file: a header line starting with `id,v,b`, then one
/// `id,v,b[,source]` record per line. Blank lines and lines starting with `#`
/// are skipped. The source column defaults to `file`.
pub fn parse_scores(text: &str) -> Result<Vec<ScoreRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    match lines.next() {
        Some((_, header)) if header.replace(' ', "").starts_with("id,v,b") => {}
        _ => return Err(Error::Config("score file must start with the header id,v,b".into())),
    }
    lines
        .map(|(n, line)| {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::Config(format!("score file line {n}: expected id,v,b[,source]")));
            }
            let num = |s: &str, name: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Config(format!("score file line {n}: {name} = {s:?} is not a number")))
            };
            let source = match fields.get(3).copied().unwrap_or("file") {
                "file" => ScoreSource::File,
                "proxy" => ScoreSource::Proxy,
                other => return Err(Error::Config(format!("score file line {n}: unknown source {other:?}"))),
            };
            let scores = PerceptualScores::new(num(fields[1], "v")?, num(fields[2], "b")?, source)?;
            Ok(ScoreRecord {
                id: fields[0].to_string(),
                scores,
            })
        })
        .collect()
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn format_scores(records: &[ScoreRecord]) -> String {
    let mut out = format!("{SCORE_HEADER}\n");
    for r in records {
        let source = match r.scores.source {
            ScoreSource::File => "file",
            ScoreSource::Proxy => "proxy",
        };
        out.push_str(&format!("{},{},{},{}\n", r.id, r.scores.v, r.scores.b, source));
    }
    out
}

/// Finds the record whose id equals the file name or the file stem of
/// `image`.
pub fn lookup_scores<'a>(records: &'a [ScoreRecord], image: &Path) -> Option<&'a ScoreRecord> {
    let name = image.file_name().and_then(|s| s.to_str());
    let stem = image.file_stem().and_then(|s| s.to_str());
    records
        .iter()
        .find(|r| Some(r.id.as_str()) == name)
        .or_else(|| records.iter().find(|r| Some(r.id.as_str()) == stem))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct ScoreEcho {
    pub v: f64,
    pub b: f64,
    pub source: ScoreSource,
}

impl From<&PerceptualScores> for ScoreEcho {
    fn from(s: &PerceptualScores) -> Self {
        Self {
            v: s.v,
            b: s.b,
            source: s.source,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PsnrReport {
    pub reference: PathBuf,
    pub input_db: f64,
    pub output_db: f64,
    pub gain_db: f64,
}

/// Everything needed to reproduce and audit one `enhance` run. The only
/// field that differs between identical runs is `timestamp_unix`.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub timestamp_unix: u64,
    pub input: PathBuf,
    pub output: PathBuf,
    pub trace: PathBuf,
    pub seed: u64,
    pub config: RunConfig,
    pub scores: ScoreEcho,
    pub n_v: usize,
    pub e_d: f64,
    pub strength: f64,
    pub steps: usize,
    pub initial_loss: LossBreakdown,
    pub final_loss: LossBreakdown,
    /// Largest imaginary residue of the final inverse transform.
    pub max_residual_imag: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<PsnrReport>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        // f64::INFINITY has no JSON form; serde_json writes it as null
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
