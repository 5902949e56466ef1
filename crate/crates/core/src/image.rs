//! Image tensors, region geometry, and patch pasting.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Class index emitted by a classifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelId(pub u32);

impl std::fmt::Display for LabelId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// H×W×C pixel array, row-major `(h, w, c)`, values nominally in `[0, 1]`.
///
/// Tensors loaded from files are validated to `[0, 1]`; noise-perturbed
/// tensors may leave that range unless clipping is requested.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(
                "image dimensions must be positive".into(),
            ));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "data length {} != {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn idx(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.idx(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f32) {
        let i = self.idx(row, col, ch);
        self.data[i] = v;
    }

    /// Exact byte serialization of shape plus pixel bits. Two tensors have
    /// equal bytes iff they are bit-identical, which is what the classify
    /// cache keys on.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.data.len() * 4);
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_bits().to_le_bytes());
        }
        out
    }

    /// Content digest of the tensor bytes.
    pub fn digest(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        hasher.update(self.canonical_bytes());
        hasher.finalize().into()
    }

    /// First eight digest bytes as a stable per-content identifier. Used to
    /// key noise streams so identical tensors always see identical draws.
    pub fn content_id(&self) -> u64 {
        let d = self.digest();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Rectangular pixel region, half-open on the end coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub row_start: usize,
    pub col_start: usize,
    pub row_end: usize,
    pub col_end: usize,
}

impl RegionSpec {
    pub fn new(row_start: usize, col_start: usize, row_end: usize, col_end: usize) -> Result<Self> {
        if row_start >= row_end || col_start >= col_end {
            return Err(Error::InvalidArgument(format!(
                "empty region ({row_start},{col_start},{row_end},{col_end})"
            )));
        }
        Ok(Self {
            row_start,
            col_start,
            row_end,
            col_end,
        })
    }

    pub fn rows(&self) -> usize {
        self.row_end - self.row_start
    }

    pub fn cols(&self) -> usize {
        self.col_end - self.col_start
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row_end <= height && self.col_end <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_start..self.row_end).contains(&row) && (self.col_start..self.col_end).contains(&col)
    }

    /// True when `self` is contained in `other`.
    pub fn within(&self, other: &RegionSpec) -> bool {
        self.row_start >= other.row_start
            && self.col_start >= other.col_start
            && self.row_end <= other.row_end
            && self.col_end <= other.col_end
    }
}

// Pool ratios arrive as decimal literals (0.9, 0.15, ...) whose binary
// representation can sit a few ulps below the intended value; a bare floor
// would then drop a whole pixel. The nudge is far above representation error
// and far below one pixel.
const COORD_EPS: f64 = 1e-9;

fn floor_coord(x: f64) -> usize {
    (x + COORD_EPS).floor().max(0.0) as usize
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio {ratio} outside (0, 1)"
        )));
    }
    Ok(())
}

/// Centered region whose height is `ratio * height` (same for width),
/// coordinates floored, intervals half-open.
pub fn central_region(height: usize, width: usize, ratio: f64) -> Result<RegionSpec> {
    check_ratio(ratio)?;
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(
            "image must be at least 2x2 for central regions".into(),
        ));
    }
    let row_start = floor_coord((1.0 - ratio) / 2.0 * height as f64);
    let row_end = floor_coord((1.0 + ratio) / 2.0 * height as f64);
    let col_start = floor_coord((1.0 - ratio) / 2.0 * width as f64);
    let col_end = floor_coord((1.0 + ratio) / 2.0 * width as f64);
    RegionSpec::new(row_start, col_start, row_end.min(height), col_end.min(width))
}

/// Lower-right corner block covering the last `ratio` fraction of each axis.
pub fn corner_region(height: usize, width: usize, ratio: f64) -> Result<RegionSpec> {
    check_ratio(ratio)?;
    if height < 2 || width < 2 {
        return Err(Error::InvalidArgument(
            "image must be at least 2x2 for corner regions".into(),
        ));
    }
    let row_start = floor_coord((1.0 - ratio) * height as f64);
    let col_start = floor_coord((1.0 - ratio) * width as f64);
    RegionSpec::new(row_start, col_start, height, width)
}

fn check_same_shape(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn check_region(region: &RegionSpec, img: &ImageTensor) -> Result<()> {
    if !region.fits(img.height(), img.width()) {
        return Err(Error::ShapeMismatch(format!(
            "region {:?} outside {}x{}",
            region,
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Returns `target` with `region` replaced by the corresponding pixels of
/// `source`, all channels. Inputs are not mutated.
pub fn paste_region(source: &ImageTensor, target: &ImageTensor, region: &RegionSpec) -> Result<ImageTensor> {
    check_same_shape(source, target)?;
    check_region(region, target)?;
    let mut out = target.clone();
    let c = target.channels();
    let row_bytes = (region.col_end - region.col_start) * c;
    for row in region.row_start..region.row_end {
        let start = out.idx(row, region.col_start, 0);
        out.data_mut()[start..start + row_bytes]
            .copy_from_slice(&source.data()[start..start + row_bytes]);
    }
    Ok(out)
}

/// Copies `region` of `img` into a fresh zero tensor of the same shape.
/// `paste_region(&extract_region(z, r)?, x, r)` equals `paste_region(z, x, r)`.
pub fn extract_region(img: &ImageTensor, region: &RegionSpec) -> Result<ImageTensor> {
    check_region(region, img)?;
    let zero = ImageTensor::zeros(img.height(), img.width(), img.channels());
    paste_region(img, &zero, region)
}

/// The fixed pools of central-region aspect ratios and noise variances the
/// metrics are vectorized over.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub ratios: Vec<f64>,
    pub variances: Vec<f64>,
    pub extra_corner_regions: bool,
}

pub const DEFAULT_RATIOS: [f64; 16] = [
    0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.9,
];

pub const DEFAULT_VARIANCES: [f64; 16] = [
    0.001, 0.003, 0.005, 0.007, 0.01, 0.03, 0.05, 0.07, 0.1, 0.3, 0.5, 0.7, 1.0, 1.5, 2.0, 3.0,
];

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            ratios: DEFAULT_RATIOS.to_vec(),
            variances: DEFAULT_VARIANCES.to_vec(),
            extra_corner_regions: false,
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ratios.is_empty() {
            return Err(Error::InvalidArgument("empty ratio pool".into()));
        }
        if self.ratios.len() != self.variances.len() {
            return Err(Error::InvalidArgument(format!(
                "ratio pool ({}) and variance pool ({}) must pair by index",
                self.ratios.len(),
                self.variances.len()
            )));
        }
        for &r in &self.ratios {
            check_ratio(r)?;
        }
        for &v in &self.variances {
            if v <= 0.0 {
                return Err(Error::InvalidArgument(format!("variance {v} must be > 0")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    /// Hex digest identifying the pool; stored alongside serialized profiles
    /// and models so mismatched configurations are detectable.
    pub fn pool_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for r in &self.ratios {
            hasher.update(r.to_le_bytes());
        }
        hasher.update([0xff]);
        for v in &self.variances {
            hasher.update(v.to_le_bytes());
        }
        hasher.update([self.extra_corner_regions as u8]);
        let digest = hasher.finalize();
        let mut s = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write;
            write!(s, "{b:02x}").unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_region_examples() {
        assert_eq!(
            central_region(28, 28, 0.5).unwrap(),
            RegionSpec::new(7, 7, 21, 21).unwrap()
        );
        assert_eq!(
            central_region(10, 10, 0.9).unwrap(),
            RegionSpec::new(0, 0, 9, 9).unwrap()
        );
        assert_eq!(
            central_region(28, 28, 0.1).unwrap(),
            RegionSpec::new(12, 12, 15, 15).unwrap()
        );
    }

    #[test]
    fn corner_region_examples() {
        assert_eq!(
            corner_region(28, 28, 0.5).unwrap(),
            RegionSpec::new(14, 14, 28, 28).unwrap()
        );
        assert_eq!(
            corner_region(10, 10, 0.9).unwrap(),
            RegionSpec::new(1, 1, 10, 10).unwrap()
        );
        assert_eq!(
            corner_region(28, 28, 0.1).unwrap(),
            RegionSpec::new(25, 25, 28, 28).unwrap()
        );
    }

    #[test]
    fn ratio_domain_is_enforced() {
        assert!(central_region(28, 28, 0.0).is_err());
        assert!(central_region(28, 28, 1.0).is_err());
        assert!(central_region(28, 28, -0.2).is_err());
        assert!(corner_region(28, 28, 1.5).is_err());
    }

    #[test]
    fn paste_self_is_identity() {
        let img = ImageTensor::new(4, 4, 1, (0..16).map(|v| v as f32 / 16.0).collect()).unwrap();
        let region = RegionSpec::new(1, 1, 3, 3).unwrap();
        let out = paste_region(&img, &img, &region).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn paste_full_cover_returns_source() {
        let src = ImageTensor::new(3, 3, 2, vec![0.5; 18]).unwrap();
        let dst = ImageTensor::zeros(3, 3, 2);
        let region = RegionSpec::new(0, 0, 3, 3).unwrap();
        assert_eq!(paste_region(&src, &dst, &region).unwrap(), src);
    }

    #[test]
    fn paste_direct_substitution() {
        let src = ImageTensor::new(2, 2, 1, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let dst = ImageTensor::zeros(2, 2, 1);
        let region = RegionSpec::new(0, 0, 1, 2).unwrap();
        let out = paste_region(&src, &dst, &region).unwrap();
        assert_eq!(out.data(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn paste_rejects_shape_mismatch() {
        let a = ImageTensor::zeros(2, 2, 1);
        let b = ImageTensor::zeros(2, 3, 1);
        let region = RegionSpec::new(0, 0, 1, 1).unwrap();
        assert!(matches!(
            paste_region(&a, &b, &region),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn paste_does_not_mutate_inputs() {
        let src = ImageTensor::new(2, 2, 1, vec![1.0; 4]).unwrap();
        let dst = ImageTensor::zeros(2, 2, 1);
        let region = RegionSpec::new(0, 0, 2, 1).unwrap();
        let src_before = src.clone();
        let dst_before = dst.clone();
        let _ = paste_region(&src, &dst, &region).unwrap();
        assert_eq!(src, src_before);
        assert_eq!(dst, dst_before);
    }

    #[test]
    fn paste_roundtrip_restores_target() {
        // paste z's patch into x, then paste x's saved patch back.
        let z = ImageTensor::new(4, 4, 1, (0..16).map(|v| v as f32 / 20.0).collect()).unwrap();
        let x = ImageTensor::new(4, 4, 1, (0..16).map(|v| (15 - v) as f32 / 20.0).collect()).unwrap();
        let region = RegionSpec::new(1, 0, 3, 2).unwrap();
        let saved = extract_region(&x, &region).unwrap();
        let stamped = paste_region(&z, &x, &region).unwrap();
        let restored = paste_region(&saved, &stamped, &region).unwrap();
        assert_eq!(restored, x);
    }

    #[test]
    fn default_pool_matches_published_lists() {
        let pool = PoolConfig::default();
        assert_eq!(pool.ratios.len(), 16);
        assert_eq!(pool.variances.len(), 16);
        assert_eq!(pool.ratios[0], 0.1);
        assert_eq!(pool.ratios[15], 0.9);
        assert_eq!(pool.variances[0], 0.001);
        assert_eq!(pool.variances[15], 3.0);
        pool.validate().unwrap();
    }

    #[test]
    fn pool_hash_tracks_contents() {
        let a = PoolConfig::default();
        let mut b = PoolConfig::default();
        assert_eq!(a.pool_hash(), b.pool_hash());
        b.extra_corner_regions = true;
        assert_ne!(a.pool_hash(), b.pool_hash());
    }

    #[test]
    fn content_id_is_content_derived() {
        let a = ImageTensor::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let b = ImageTensor::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let c = ImageTensor::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.5]).unwrap();
        assert_eq!(a.content_id(), b.content_id());
        assert_ne!(a.content_id(), c.content_id());
    }
}
