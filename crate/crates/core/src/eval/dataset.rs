//! Image datasets: procedural generation, ingestion of PNM files, and a
//! compact binary container.
//!
//! Binary layout (all integers big-endian):
//!
//! ```text
//! magic      6 bytes  "PNCDS1"
//! count      u32
//! channels   u8
//! height     u16
//! width      u16
//! n_classes  u16
//! per sample:
//!   id       u32
//!   split    u8      0 = train_ae, 1 = val, 2 = test
//!   label    u16
//!   pixels   channels * height * width bytes, CHW order
//! ```

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::nn::Tensor;

const MAGIC: &[u8; 6] = b"PNCDS1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    TrainAe,
    Val,
    Test,
}

impl Split {
    fn code(self) -> u8 {
        match self {
            Split::TrainAe => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::TrainAe),
            1 => Some(Split::Val),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: u32,
    pub label: usize,
    pub split: Split,
    /// 8-bit pixels in CHW order.
    pub pixels: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub n_classes: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn image_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    pub fn ids(&self, split: Split) -> HashSet<u32> {
        self.split(split).iter().map(|s| s.id).collect()
    }

    /// Stacks samples into a `[n, C, H, W]` tensor with values in `[0, 1]`.
    pub fn tensor(&self, samples: &[&Sample]) -> Tensor {
        let per = self.channels * self.height * self.width;
        let mut data = Vec::with_capacity(samples.len() * per);
        for s in samples {
            data.extend(s.pixels.iter().map(|&p| f64::from(p) / 255.0));
        }
        Tensor::from_vec(
            &[samples.len(), self.channels, self.height, self.width],
            data,
        )
        .expect("pixel count matches dataset geometry")
    }

    pub fn labels(samples: &[&Sample]) -> Vec<usize> {
        samples.iter().map(|s| s.label).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let per = self.channels * self.height * self.width;
        let mut out = Vec::with_capacity(17 + self.samples.len() * (7 + per));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.samples.len() as u32).to_be_bytes());
        out.push(self.channels as u8);
        out.extend_from_slice(&(self.height as u16).to_be_bytes());
        out.extend_from_slice(&(self.width as u16).to_be_bytes());
        out.extend_from_slice(&(self.n_classes as u16).to_be_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.id.to_be_bytes());
            out.push(s.split.code());
            out.extend_from_slice(&(s.label as u16).to_be_bytes());
            out.extend_from_slice(&s.pixels);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, EvalError> {
        let bad = |m: &str| EvalError::Format(format!("dataset: {m}"));
        if bytes.len() < 17 || &bytes[..6] != MAGIC {
            return Err(bad("bad magic"));
        }
        let count = u32::from_be_bytes(bytes[6..10].try_into().unwrap()) as usize;
        let channels = bytes[10] as usize;
        let height = u16::from_be_bytes([bytes[11], bytes[12]]) as usize;
        let width = u16::from_be_bytes([bytes[13], bytes[14]]) as usize;
        let n_classes = u16::from_be_bytes([bytes[15], bytes[16]]) as usize;
        let per = channels * height * width;
        let mut pos = 17;
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            if bytes.len() < pos + 7 + per {
                return Err(bad("truncated sample"));
            }
            let id = u32::from_be_bytes(bytes[pos..pos + 4].try_into().unwrap());
            let split = Split::from_code(bytes[pos + 4]).ok_or_else(|| bad("bad split code"))?;
            let label = u16::from_be_bytes([bytes[pos + 5], bytes[pos + 6]]) as usize;
            if label >= n_classes {
                return Err(bad("label out of range"));
            }
            pos += 7;
            samples.push(Sample {
                id,
                label,
                split,
                pixels: bytes[pos..pos + per].to_vec(),
            });
            pos += per;
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            channels,
            height,
            width,
            n_classes,
            samples,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), EvalError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Parameters of the procedural shape dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_classes: usize,
    pub size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    /// Maximum centre offset in pixels.
    pub jitter: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            size: 32,
            train: 2000,
            val: 500,
            test: 500,
            noise: 0.08,
            jitter: 4.0,
        }
    }
}

/// Renders a balanced, seeded dataset of grayscale silhouettes (see `render_shape`).
/// Splits are assigned before rendering so every split is balanced.
pub fn generate_synthetic_dataset(
    config: &SyntheticConfig,
    seed: u64,
) -> Result<Dataset, EvalError> {
    if config.n_classes < 2 || config.n_classes > CLASSES {
        return Err(EvalError::Config(format!(
            "n_classes must be within 2..={CLASSES}"
        )));
    }
    if config.size < 8 {
        return Err(EvalError::Config("image size must be at least 8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::new();
    let mut id = 0u32;
    for (split, count) in [
        (Split::TrainAe, config.train),
        (Split::Val, config.val),
        (Split::Test, config.test),
    ] {
        let mut labels: Vec<usize> = (0..count).map(|i| i % config.n_classes).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            let pixels = render_shape(label, config, &mut rng);
            samples.push(Sample {
                id,
                label,
                split,
                pixels,
            });
            id += 1;
        }
    }
    Ok(Dataset {
        channels: 1,
        height: config.size,
        width: config.size,
        n_classes: config.n_classes,
        samples,
    })
}

const SHAPES: usize = 2;
const ORIENTATIONS: usize = 5;
const CLASSES: usize = SHAPES * ORIENTATIONS;

/// Class `label` is silhouette `label % 5` filled with fine stripes that run
/// roughly horizontally (`label < 5`) or vertically (`label >= 5`). Both fills
/// have the same mean, so silhouettes survive coarse reconstructions while the
/// stripe direction needs fine detail.
fn render_shape(label: usize, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let n = config.size;
    let unit = n as f64 / 32.0;
    let cx = n as f64 / 2.0 + rng.gen_range(-config.jitter..=config.jitter) * unit;
    let cy = n as f64 / 2.0 + rng.gen_range(-config.jitter..=config.jitter) * unit;
    let scale = rng.gen_range(0.85..1.15) * unit;
    let intensity = rng.gen_range(0.6..1.0);
    let angle = rng.gen_range(-0.3..0.3);
    let background = rng.gen_range(0.0..0.15);
    let stripe_angle =
        (label / SHAPES) as f64 * PI / ORIENTATIONS as f64 + rng.gen_range(-0.15..0.15);
    let stripe_phase = rng.gen_range(0.0..2.0 * PI);
    let stripe_period = 3.0 * unit;
    let (sin, cos) = f64::sin_cos(angle);
    let (ssin, scos) = f64::sin_cos(stripe_angle);
    let mut pixels = Vec::with_capacity(n * n);
    for py in 0..n {
        for px in 0..n {
            let dx = px as f64 + 0.5 - cx;
            let dy = py as f64 + 0.5 - cy;
            let u = (cos * dx + sin * dy) / scale;
            let v = (-sin * dx + cos * dy) / scale;
            let d = shape_distance(label % SHAPES, u, v);
            // anti-aliased edge: distance in shape units, ~1 px wide ramp
            let coverage = (0.5 - d * scale).clamp(0.0, 1.0);
            let t = (ssin * dx - scos * dy) * 2.0 * PI / stripe_period + stripe_phase;
            let fill = 0.5 + 0.5 * t.cos();
            let noise = gaussian(rng) * config.noise;
            let value = background + intensity * coverage * fill + noise;
            pixels.push((value.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    pixels
}

/// Signed distance (negative inside) to a silhouette in shape units.
fn shape_distance(shape: usize, u: f64, v: f64) -> f64 {
    let r = (u * u + v * v).sqrt();
    match shape {
        0 => r - 8.5,
        _ => u.abs().max(v.abs()) - 7.5,
    }
}

fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Problem found while ingesting one manifest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct IngestIssue {
    pub file: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, Deserialize)]
struct ManifestRow {
    file: PathBuf,
    label: usize,
    #[serde(default)]
    split: Option<Split>,
}

/// Shape and split policy for [`ingest_raw_dataset`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub channels: usize,
    pub size: usize,
    pub n_classes: usize,
    /// Fractions for rows without an explicit split column: (train_ae, val).
    /// The remainder goes to test.
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            size: 32,
            n_classes: 10,
            train_fraction: 0.7,
            val_fraction: 0.15,
        }
    }
}

/// Reads a CSV manifest with columns `file,label[,split]` and loads each
/// PGM/PPM image, converting to the configured channel count and resizing to
/// `size x size`. Paths are relative to the manifest's directory. Bad rows
/// are reported and skipped; duplicate files are loaded once.
pub fn ingest_raw_dataset(
    manifest: &Path,
    config: &IngestConfig,
    seed: u64,
) -> Result<(Dataset, Vec<IngestIssue>), EvalError> {
    if config.channels != 1 && config.channels != 3 {
        return Err(EvalError::Config("channels must be 1 or 3".into()));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::Reader::from_path(manifest)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = HashSet::new();
    let mut issues = Vec::new();
    let mut samples = Vec::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                issues.push(IngestIssue {
                    file: PathBuf::new(),
                    reason: e.to_string(),
                });
                continue;
            }
        };
        let path = base.join(&row.file);
        if !seen.insert(path.clone()) {
            log::warn!("duplicate manifest entry {} ignored", row.file.display());
            continue;
        }
        if row.label >= config.n_classes {
            issues.push(IngestIssue {
                file: row.file,
                reason: format!("label {} out of range", row.label),
            });
            continue;
        }
        let pixels = match load_pixels(&path, config) {
            Ok(p) => p,
            Err(reason) => {
                issues.push(IngestIssue {
                    file: row.file,
                    reason,
                });
                continue;
            }
        };
        let draw: f64 = rng.gen();
        let split = row.split.unwrap_or(if draw < config.train_fraction {
            Split::TrainAe
        } else if draw < config.train_fraction + config.val_fraction {
            Split::Val
        } else {
            Split::Test
        });
        samples.push(Sample {
            id: samples.len() as u32,
            label: row.label,
            split,
            pixels,
        });
    }
    Ok((
        Dataset {
            channels: config.channels,
            height: config.size,
            width: config.size,
            n_classes: config.n_classes,
            samples,
        },
        issues,
    ))
}

fn load_pixels(path: &Path, config: &IngestConfig) -> Result<Vec<u8>, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    let size = config.size as u32;
    let img = if img.width() != size || img.height() != size {
        img.resize_exact(size, size, image::imageops::FilterType::Triangle)
    } else {
        img
    };
    if config.channels == 1 {
        Ok(img.to_luma8().into_raw())
    } else {
        let rgb = img.to_rgb8();
        let plane = (size * size) as usize;
        let raw = rgb.into_raw();
        let mut chw = vec![0u8; 3 * plane];
        for (i, px) in raw.chunks_exact(3).enumerate() {
            for c in 0..3 {
                chw[c * plane + i] = px[c];
            }
        }
        Ok(chw)
    }
}
