//! Deterministic synthetic classifiers used for desk-scale verification.
//!
//! The benign rule reads a class code out of a fixed block; backdoored
//! variants overlay a trigger predicate and emit the attacker-chosen label
//! whenever it fires. All rules are pure functions of the tensor bytes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Classifier;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, LabelId, RegionSpec};
use crate::noise::{domain, Seed};

/// Side length of the class-code block.
pub const BLOCK_SIZE: usize = 6;

/// Default trigger threshold for pixel-valued triggers.
pub const DEFAULT_TRIGGER_THRESHOLD: f32 = 0.95;

/// Default correlation threshold for the blended trigger. The blended
/// pattern is strong enough that poisoned correlations sit near 0.9 while
/// clean ones stay within a few hundredths of zero.
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Benign,
    CenterPixel,
    FourCorner,
    Blended,
    FragileWatermark,
}

impl OracleKind {
    pub fn is_backdoored(&self) -> bool {
        !matches!(self, OracleKind::Benign)
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OracleKind::Benign => "benign",
            OracleKind::CenterPixel => "center_pixel",
            OracleKind::FourCorner => "four_corner",
            OracleKind::Blended => "blended",
            OracleKind::FragileWatermark => "fragile_watermark",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for OracleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "benign" => Ok(OracleKind::Benign),
            "center_pixel" | "center-pixel" => Ok(OracleKind::CenterPixel),
            "four_corner" | "four-corner" => Ok(OracleKind::FourCorner),
            "blended" => Ok(OracleKind::Blended),
            "fragile_watermark" | "fragile-watermark" => Ok(OracleKind::FragileWatermark),
            other => Err(Error::InvalidArgument(format!("unknown oracle kind {other:?}"))),
        }
    }
}

/// Serializable description of a synthetic oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOracleSpec {
    pub kind: OracleKind,
    pub num_classes: u32,
    pub target_label: LabelId,
    #[serde(default = "default_trigger_threshold")]
    pub trigger_threshold: f32,
    #[serde(default)]
    pub watermark_seed: u64,
    /// Blended: fixed default. Fragile watermark: produced by calibration,
    /// never hand-picked.
    #[serde(default = "default_correlation_threshold")]
    pub correlation_threshold: f64,
}

fn default_trigger_threshold() -> f32 {
    DEFAULT_TRIGGER_THRESHOLD
}

fn default_correlation_threshold() -> f64 {
    DEFAULT_CORRELATION_THRESHOLD
}

impl SyntheticOracleSpec {
    pub fn benign(num_classes: u32) -> Self {
        Self {
            kind: OracleKind::Benign,
            num_classes,
            target_label: LabelId(0),
            trigger_threshold: DEFAULT_TRIGGER_THRESHOLD,
            watermark_seed: 0,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
        }
    }

    pub fn backdoored(kind: OracleKind, num_classes: u32, target_label: LabelId, watermark_seed: u64) -> Self {
        Self {
            kind,
            num_classes,
            target_label,
            trigger_threshold: DEFAULT_TRIGGER_THRESHOLD,
            watermark_seed,
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if self.target_label.0 >= self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "target label {} outside {} classes",
                self.target_label, self.num_classes
            )));
        }
        Ok(())
    }

    pub fn build(self) -> Result<SyntheticOracle> {
        self.validate()?;
        Ok(SyntheticOracle {
            spec: self,
            patterns: Mutex::new(HashMap::new()),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("oracle spec serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self =
            serde_json::from_str(s).map_err(|e| Error::DataFormat(format!("oracle spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// The class-code block for an image shape: 6x6, top-left at
/// `(h/2 - 3, w/4)`.
pub fn benign_block(height: usize, width: usize) -> Result<RegionSpec> {
    if height < BLOCK_SIZE || width < 2 * BLOCK_SIZE - 4 {
        return Err(Error::ShapeMismatch(format!(
            "image {height}x{width} too small for the class block"
        )));
    }
    let row = height / 2 - BLOCK_SIZE / 2;
    let col = width / 4;
    if col + BLOCK_SIZE > width {
        return Err(Error::ShapeMismatch(format!(
            "image {height}x{width} too narrow for the class block"
        )));
    }
    RegionSpec::new(row, col, row + BLOCK_SIZE, col + BLOCK_SIZE)
}

/// Intensity encoding class `c` out of `num_classes`.
pub fn class_intensity(class: u32, num_classes: u32) -> f32 {
    (class as f32 + 1.0) / (num_classes as f32 + 1.0)
}

fn block_mean(img: &ImageTensor, block: &RegionSpec) -> f64 {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for row in block.row_start..block.row_end {
        for col in block.col_start..block.col_end {
            for ch in 0..img.channels() {
                sum += img.get(row, col, ch) as f64;
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// Decodes the benign label: `round(mean * (num_classes + 1)) - 1`, clamped.
pub fn benign_label(img: &ImageTensor, num_classes: u32) -> Result<LabelId> {
    let block = benign_block(img.height(), img.width())?;
    let m = block_mean(img, &block);
    let raw = (m * (num_classes as f64 + 1.0)).round() - 1.0;
    let clamped = raw.clamp(0.0, num_classes as f64 - 1.0);
    Ok(LabelId(clamped as u32))
}

/// Min intensity across channels at one pixel.
fn pixel_min(img: &ImageTensor, row: usize, col: usize) -> f32 {
    (0..img.channels())
        .map(|ch| img.get(row, col, ch))
        .fold(f32::INFINITY, f32::min)
}

struct ShapePattern {
    /// Flat data indices forming the statistic support.
    support: Vec<usize>,
    /// Mean-centered pattern over the support.
    centered: Vec<f64>,
    norm: f64,
}

fn build_pattern(kind: OracleKind, seed: u64, shape: (usize, usize, usize)) -> Result<ShapePattern> {
    let pairs = pattern_values(kind, seed, shape)?;
    let support: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
    let raw: Vec<f64> = pairs.iter().map(|&(_, v)| v).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let centered: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(ShapePattern { support, centered, norm })
}

/// Pattern values a generator should add to poison an image: the same draws
/// the oracle correlates against, as `(flat index, value)` pairs.
///
/// Blended rides on everything except the class block; the fragile watermark
/// rides exactly on the class block, where the benign content is constant
/// and cancels out of the deviation the oracle measures.
pub fn pattern_values(kind: OracleKind, seed: u64, shape: (usize, usize, usize)) -> Result<Vec<(usize, f64)>> {
    let (h, w, c) = shape;
    let block = benign_block(h, w)?;
    let mut support = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let inside = block.contains(row, col);
            let keep = match kind {
                OracleKind::Blended => !inside,
                OracleKind::FragileWatermark => inside,
                _ => return Err(Error::InvalidArgument("kind has no pattern".into())),
            };
            if keep {
                for ch in 0..c {
                    support.push((row * w + col) * c + ch);
                }
            }
        }
    }
    let tag = match kind {
        OracleKind::Blended => 1u64,
        OracleKind::FragileWatermark => 2u64,
        _ => unreachable!(),
    };
    let mut rng = Seed(seed).stream(&[domain::PATTERN, tag, h as u64, w as u64, c as u64]);
    Ok(support
        .into_iter()
        .map(|i| {
            let v = match kind {
                OracleKind::Blended => rng.gen_range(0.0..0.1),
                OracleKind::FragileWatermark => rng.gen_range(-0.04..0.04),
                _ => unreachable!(),
            };
            (i, v)
        })
        .collect())
}

/// A built synthetic classifier.
pub struct SyntheticOracle {
    spec: SyntheticOracleSpec,
    patterns: Mutex<HashMap<(usize, usize, usize), Arc<ShapePattern>>>,
}

impl SyntheticOracle {
    pub fn spec(&self) -> &SyntheticOracleSpec {
        &self.spec
    }

    fn pattern_for(&self, shape: (usize, usize, usize)) -> Result<Arc<ShapePattern>> {
        let mut cache = self.patterns.lock().unwrap();
        if let Some(p) = cache.get(&shape) {
            return Ok(p.clone());
        }
        let p = Arc::new(build_pattern(self.spec.kind, self.spec.watermark_seed, shape)?);
        cache.insert(shape, p.clone());
        Ok(p)
    }

    /// Mean-centered cosine between the image restricted to the trigger
    /// support and the seeded pattern. Deterministic in (image bytes, seed).
    pub fn correlation(&self, img: &ImageTensor) -> Result<f64> {
        let pat = self.pattern_for(img.shape())?;
        let vals: Vec<f64> = pat.support.iter().map(|&i| img.data()[i] as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let mut dot = 0.0f64;
        let mut dev_sq = 0.0f64;
        for (v, p) in vals.iter().zip(&pat.centered) {
            let d = v - mean;
            dot += d * p;
            dev_sq += d * d;
        }
        let denom = dev_sq.sqrt() * pat.norm;
        if denom <= f64::EPSILON {
            return Ok(0.0);
        }
        Ok(dot / denom)
    }

    fn trigger_fires(&self, img: &ImageTensor) -> Result<bool> {
        let h = img.height();
        let w = img.width();
        match self.spec.kind {
            OracleKind::Benign => Ok(false),
            OracleKind::CenterPixel => Ok(pixel_min(img, h / 2, w / 2) >= self.spec.trigger_threshold),
            OracleKind::FourCorner => {
                let corners = [(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)];
                Ok(corners
                    .iter()
                    .all(|&(r, c)| pixel_min(img, r, c) >= self.spec.trigger_threshold))
            }
            OracleKind::Blended | OracleKind::FragileWatermark => {
                Ok(self.correlation(img)? >= self.spec.correlation_threshold)
            }
        }
    }
}

impl Classifier for SyntheticOracle {
    fn classify(&self, image: &ImageTensor) -> Result<LabelId> {
        if self.trigger_fires(image)? {
            return Ok(self.spec.target_label);
        }
        benign_label(image, self.spec.num_classes)
    }

    fn num_classes(&self) -> u32 {
        self.spec.num_classes
    }
}
