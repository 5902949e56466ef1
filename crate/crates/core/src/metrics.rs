//! The five behavioral metrics and the per-input profile calculator.
//!
//! Each metric is a mean of indicator values over the clean validation set,
//! so every profile entry is an exact multiple of `1/n`. The profile
//! calculator vectorizes the metrics over the region/variance pools:
//! robustness and weakness share one synthetic image per (sample, region)
//! pair, sensitivity and inverse sensitivity share another, and noise
//! invariance uses one perturbed copy per (sample, pool index, validation
//! index), for exactly `1 + 3 * pool * n` underlying queries per fresh input
//! once validation labels are cached.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blackbox::Classifier;
use crate::error::{Error, Result};
use crate::image::{central_region, corner_region, paste_region, ImageTensor, LabelId, PoolConfig, RegionSpec};
use crate::noise::{add_noise, Seed};

/// The clean validation samples with their cached classifier labels.
#[derive(Debug, Clone)]
pub struct ValidationSet {
    samples: Vec<ImageTensor>,
    labels: Vec<LabelId>,
}

impl ValidationSet {
    /// Builds the set by querying the classifier once per sample.
    pub fn new<C: Classifier>(samples: Vec<ImageTensor>, classifier: &C) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("validation set is empty".into()));
        }
        let shape = samples[0].shape();
        if samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::ShapeMismatch(
                "validation samples must share one shape".into(),
            ));
        }
        let labels = samples
            .iter()
            .map(|s| classifier.classify(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { samples, labels })
    }

    /// Rebuilds a set from already-known labels (e.g. a stored bundle).
    pub fn from_parts(samples: Vec<ImageTensor>, labels: Vec<LabelId>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("validation set is empty".into()));
        }
        if samples.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples, {} labels",
                samples.len(),
                labels.len()
            )));
        }
        let shape = samples[0].shape();
        if samples.iter().any(|s| s.shape() != shape) {
            return Err(Error::ShapeMismatch(
                "validation samples must share one shape".into(),
            ));
        }
        Ok(Self { samples, labels })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ImageTensor] {
        &self.samples
    }

    pub fn labels(&self) -> &[LabelId] {
        &self.labels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.samples[0].shape()
    }
}

/// The five metric vectors of one input. With corner regions enabled the
/// four region metrics carry `2 * pool` entries (central first), while noise
/// invariance always has `pool` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveMetricProfile {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub s: Vec<f64>,
    pub is: Vec<f64>,
    pub inv: Vec<f64>,
    pub n: usize,
}

impl FiveMetricProfile {
    pub fn metric(&self, kind: MetricKind) -> &[f64] {
        match kind {
            MetricKind::Robustness => &self.r,
            MetricKind::Weakness => &self.w,
            MetricKind::Sensitivity => &self.s,
            MetricKind::InverseSensitivity => &self.is,
            MetricKind::NoiseInvariance => &self.inv,
        }
    }
}

/// Canonical metric order: r, w, s, is, inv.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Robustness,
    Weakness,
    Sensitivity,
    InverseSensitivity,
    NoiseInvariance,
}

pub const ALL_METRICS: [MetricKind; 5] = [
    MetricKind::Robustness,
    MetricKind::Weakness,
    MetricKind::Sensitivity,
    MetricKind::InverseSensitivity,
    MetricKind::NoiseInvariance,
];

impl MetricKind {
    pub fn short_name(&self) -> &'static str {
        match self {
            MetricKind::Robustness => "r",
            MetricKind::Weakness => "w",
            MetricKind::Sensitivity => "s",
            MetricKind::InverseSensitivity => "is",
            MetricKind::NoiseInvariance => "inv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "r" => Ok(MetricKind::Robustness),
            "w" => Ok(MetricKind::Weakness),
            "s" => Ok(MetricKind::Sensitivity),
            "is" => Ok(MetricKind::InverseSensitivity),
            "inv" => Ok(MetricKind::NoiseInvariance),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Serialized profile with the pool fingerprint, for caching across CLI
/// invocations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileFile {
    pub r: Vec<f64>,
    pub w: Vec<f64>,
    pub s: Vec<f64>,
    pub is: Vec<f64>,
    pub inv: Vec<f64>,
    pub n: usize,
    pub pool_hash: String,
}

impl ProfileFile {
    pub fn new(profile: &FiveMetricProfile, pool: &PoolConfig) -> Self {
        Self {
            r: profile.r.clone(),
            w: profile.w.clone(),
            s: profile.s.clone(),
            is: profile.is.clone(),
            inv: profile.inv.clone(),
            n: profile.n,
            pool_hash: pool.pool_hash(),
        }
    }

    pub fn into_profile(self, pool: &PoolConfig) -> Result<FiveMetricProfile> {
        if self.pool_hash != pool.pool_hash() {
            return Err(Error::DataFormat(
                "profile was computed under a different pool".into(),
            ));
        }
        Ok(FiveMetricProfile {
            r: self.r,
            w: self.w,
            s: self.s,
            is: self.is,
            inv: self.inv,
            n: self.n,
        })
    }
}

fn check_z_shape(z: &ImageTensor, valset: &ValidationSet) -> Result<()> {
    if z.shape() != valset.shape() {
        return Err(Error::ShapeMismatch(format!(
            "input {:?} vs validation {:?}",
            z.shape(),
            valset.shape()
        )));
    }
    Ok(())
}

/// Fraction of validation samples where pasting z's region into them leaves
/// the classifier at z's label.
pub fn robustness<C: Classifier>(
    z: &ImageTensor,
    z_label: LabelId,
    valset: &ValidationSet,
    region: &RegionSpec,
    classifier: &C,
) -> Result<f64> {
    check_z_shape(z, valset)?;
    let mut hits = 0usize;
    for x in valset.samples() {
        let synthetic = paste_region(z, x, region)?;
        if classifier.classify(&synthetic)? == z_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / valset.len() as f64)
}

/// Fraction of validation samples whose own label survives the paste of z's
/// region.
pub fn weakness<C: Classifier>(
    z: &ImageTensor,
    _z_label: LabelId,
    valset: &ValidationSet,
    region: &RegionSpec,
    classifier: &C,
) -> Result<f64> {
    check_z_shape(z, valset)?;
    let mut hits = 0usize;
    for (x, &label) in valset.samples().iter().zip(valset.labels()) {
        let synthetic = paste_region(z, x, region)?;
        if classifier.classify(&synthetic)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / valset.len() as f64)
}

/// Fraction of validation samples whose region pasted into z leaves the
/// classifier at z's label.
pub fn sensitivity<C: Classifier>(
    z: &ImageTensor,
    z_label: LabelId,
    valset: &ValidationSet,
    region: &RegionSpec,
    classifier: &C,
) -> Result<f64> {
    check_z_shape(z, valset)?;
    let mut hits = 0usize;
    for x in valset.samples() {
        let synthetic = paste_region(x, z, region)?;
        if classifier.classify(&synthetic)? == z_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / valset.len() as f64)
}

/// Fraction of validation samples whose region pasted into z takes the
/// classifier to the validation sample's label.
pub fn inverse_sensitivity<C: Classifier>(
    z: &ImageTensor,
    _z_label: LabelId,
    valset: &ValidationSet,
    region: &RegionSpec,
    classifier: &C,
) -> Result<f64> {
    check_z_shape(z, valset)?;
    let mut hits = 0usize;
    for (x, &label) in valset.samples().iter().zip(valset.labels()) {
        let synthetic = paste_region(x, z, region)?;
        if classifier.classify(&synthetic)? == label {
            hits += 1;
        }
    }
    Ok(hits as f64 / valset.len() as f64)
}

/// Fraction of noise draws under which z keeps its label. Draw `i` for pool
/// entry `pool_index` comes from the stream keyed by z's content id, so the
/// same tensor always sees the same perturbations.
pub fn noise_invariance<C: Classifier>(
    z: &ImageTensor,
    z_label: LabelId,
    valset: &ValidationSet,
    variance: f64,
    pool_index: usize,
    classifier: &C,
    seed: Seed,
    clip: bool,
) -> Result<f64> {
    let sample_id = z.content_id();
    let mut hits = 0usize;
    for i in 0..valset.len() {
        let mut rng = seed.noise_stream(sample_id, pool_index, i);
        let noisy = add_noise(z, variance, &mut rng, clip)?;
        if classifier.classify(&noisy)? == z_label {
            hits += 1;
        }
    }
    Ok(hits as f64 / valset.len() as f64)
}

/// Everything `metric_cal` needs besides the input itself.
#[derive(Clone, Copy)]
pub struct MetricContext<'a> {
    pub valset: &'a ValidationSet,
    pub pool: &'a PoolConfig,
    pub seed: Seed,
    pub clip_noise: bool,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum QueryRole {
    /// paste(U_z, x_i): counts robustness and weakness.
    PasteOut,
    /// paste(U_{x_i}, z): counts sensitivity and inverse sensitivity.
    PasteIn,
    /// z + eps_i: counts noise invariance.
    Noise,
}

struct QueryTask {
    role: QueryRole,
    /// Output slot in the metric vectors (central entries first, then
    /// corner entries for the region metrics).
    slot: usize,
    /// Pool index (variance lookup and noise stream key).
    pool_index: usize,
    val_index: usize,
    image: ImageTensor,
}

/// Computes the full five-metric profile of `z`.
///
/// The classifier is asked for `z`'s label exactly once per call; all other
/// queries are the synthetic paste and noise images. Tasks are evaluated in
/// parallel when the classifier allows it, with results written into
/// pre-assigned slots so scheduling cannot affect the profile.
pub fn metric_cal<C: Classifier>(
    z: &ImageTensor,
    ctx: &MetricContext<'_>,
    classifier: &C,
) -> Result<FiveMetricProfile> {
    metric_cal_with_label(z, ctx, classifier).map(|(profile, _)| profile)
}

/// As [`metric_cal`], also returning the label the classifier assigned to
/// `z` itself, so callers need no further query.
pub fn metric_cal_with_label<C: Classifier>(
    z: &ImageTensor,
    ctx: &MetricContext<'_>,
    classifier: &C,
) -> Result<(FiveMetricProfile, LabelId)> {
    check_z_shape(z, ctx.valset)?;
    ctx.pool.validate()?;
    let n = ctx.valset.len();
    let pool_len = ctx.pool.len();
    let (h, w, _) = z.shape();

    let z_label = classifier.classify(z)?;
    let sample_id = z.content_id();

    let mut regions: Vec<(usize, usize, RegionSpec)> = Vec::new(); // (slot, pool_index, region)
    for (j, &ratio) in ctx.pool.ratios.iter().enumerate() {
        regions.push((j, j, central_region(h, w, ratio)?));
    }
    if ctx.pool.extra_corner_regions {
        for (j, &ratio) in ctx.pool.ratios.iter().enumerate() {
            regions.push((pool_len + j, j, corner_region(h, w, ratio)?));
        }
    }

    let mut tasks: Vec<QueryTask> = Vec::with_capacity(regions.len() * n * 2 + pool_len * n);
    for &(slot, pool_index, ref region) in &regions {
        for (i, x) in ctx.valset.samples().iter().enumerate() {
            tasks.push(QueryTask {
                role: QueryRole::PasteOut,
                slot,
                pool_index,
                val_index: i,
                image: paste_region(z, x, region)?,
            });
            tasks.push(QueryTask {
                role: QueryRole::PasteIn,
                slot,
                pool_index,
                val_index: i,
                image: paste_region(x, z, region)?,
            });
        }
    }
    for (j, &variance) in ctx.pool.variances.iter().enumerate() {
        for i in 0..n {
            let mut rng = ctx.seed.noise_stream(sample_id, j, i);
            tasks.push(QueryTask {
                role: QueryRole::Noise,
                slot: j,
                pool_index: j,
                val_index: i,
                image: add_noise(z, variance, &mut rng, ctx.clip_noise)?,
            });
        }
    }

    let labels: Vec<LabelId> = if classifier.supports_concurrent() {
        let results: Vec<Result<LabelId>> = tasks
            .par_iter()
            .map(|t| classifier.classify(&t.image))
            .collect();
        results.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        tasks
            .iter()
            .map(|t| classifier.classify(&t.image))
            .collect::<Result<Vec<_>>>()?
    };

    let region_slots = regions.len();
    let mut r_counts = vec![0usize; region_slots];
    let mut w_counts = vec![0usize; region_slots];
    let mut s_counts = vec![0usize; region_slots];
    let mut is_counts = vec![0usize; region_slots];
    let mut inv_counts = vec![0usize; pool_len];
    for (task, &label) in tasks.iter().zip(&labels) {
        let val_label = ctx.valset.labels()[task.val_index];
        match task.role {
            QueryRole::PasteOut => {
                if label == z_label {
                    r_counts[task.slot] += 1;
                }
                if label == val_label {
                    w_counts[task.slot] += 1;
                }
            }
            QueryRole::PasteIn => {
                if label == z_label {
                    s_counts[task.slot] += 1;
                }
                if label == val_label {
                    is_counts[task.slot] += 1;
                }
            }
            QueryRole::Noise => {
                if label == z_label {
                    inv_counts[task.slot] += 1;
                }
            }
        }
    }

    let to_mean = |counts: Vec<usize>| -> Vec<f64> {
        counts.into_iter().map(|c| c as f64 / n as f64).collect()
    };
    Ok((
        FiveMetricProfile {
            r: to_mean(r_counts),
            w: to_mean(w_counts),
            s: to_mean(s_counts),
            is: to_mean(is_counts),
            inv: to_mean(inv_counts),
            n,
        },
        z_label,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blackbox::synth::clean_image;
    use crate::blackbox::{CachedClassifier, Classifier, OracleKind, SyntheticOracleSpec};
    use crate::image::LabelId;

    const SHAPE: (usize, usize, usize) = (28, 28, 1);

    fn clean(class: u32, tag: u64) -> ImageTensor {
        clean_image(10, class, SHAPE, Seed(1000), tag).unwrap()
    }

    #[test]
    fn self_paste_gives_ones_for_n1() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let x1 = clean(4, 0);
        let valset = ValidationSet::new(vec![x1.clone()], &oracle).unwrap();
        let z_label = oracle.classify(&x1).unwrap();
        let region = central_region(28, 28, 0.5).unwrap();
        assert_eq!(robustness(&x1, z_label, &valset, &region, &oracle).unwrap(), 1.0);
        assert_eq!(weakness(&x1, z_label, &valset, &region, &oracle).unwrap(), 1.0);
        assert_eq!(sensitivity(&x1, z_label, &valset, &region, &oracle).unwrap(), 1.0);
        assert_eq!(
            inverse_sensitivity(&x1, z_label, &valset, &region, &oracle).unwrap(),
            1.0
        );
    }

    #[test]
    fn metric_cal_all_ones_on_self_with_n1() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let x1 = clean(4, 0);
        let valset = ValidationSet::new(vec![x1.clone()], &oracle).unwrap();
        let pool = PoolConfig::default();
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed: Seed(5),
            clip_noise: false,
        };
        let profile = metric_cal(&x1, &ctx, &oracle).unwrap();
        assert!(profile.r.iter().all(|&v| v == 1.0));
        assert!(profile.w.iter().all(|&v| v == 1.0));
        assert!(profile.s.iter().all(|&v| v == 1.0));
        assert!(profile.is.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn center_pixel_poison_saturates_robustness() {
        // Every central region contains the image center, so each pasted
        // patch carries the trigger.
        let spec = SyntheticOracleSpec::backdoored(OracleKind::CenterPixel, 10, LabelId(9), 1);
        let oracle = CachedClassifier::new(spec.clone().build().unwrap());
        let valset = ValidationSet::new(
            vec![clean(0, 1), clean(1, 2), clean(2, 3)],
            &oracle,
        )
        .unwrap();
        let z = crate::blackbox::synth::apply_trigger(&clean(3, 4), &spec, Seed(1000), 4).unwrap();
        let z_label = oracle.classify(&z).unwrap();
        assert_eq!(z_label, LabelId(9));
        for &ratio in &crate::image::DEFAULT_RATIOS {
            let region = central_region(28, 28, ratio).unwrap();
            assert_eq!(
                robustness(&z, z_label, &valset, &region, &oracle).unwrap(),
                1.0,
                "ratio {ratio}"
            );
            // The target label differs from every validation label, so the
            // trigger-carrying paste never preserves them.
            assert_eq!(
                weakness(&z, z_label, &valset, &region, &oracle).unwrap(),
                0.0,
                "ratio {ratio}"
            );
        }
    }

    #[test]
    fn clean_region_away_from_block_scores_zero_robustness() {
        // 40x40: the class block sits at rows 17..23, cols 10..16, fully
        // outside the 0.1-ratio central region (rows/cols 18..22 vs cols
        // 10..16 -> overlap rows but not cols? -> verify disjoint).
        let shape = (40usize, 40usize, 1usize);
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let make = |class: u32, tag: u64| clean_image(10, class, shape, Seed(7), tag).unwrap();
        let valset =
            ValidationSet::new(vec![make(0, 1), make(1, 2), make(2, 3)], &oracle).unwrap();
        let z = make(5, 9);
        let z_label = oracle.classify(&z).unwrap();
        let region = central_region(40, 40, 0.1).unwrap();
        let block = crate::blackbox::oracle::benign_block(40, 40).unwrap();
        assert!(
            region.col_end <= block.col_start || region.col_start >= block.col_end
                || region.row_end <= block.row_start
                || region.row_start >= block.row_end,
            "region {region:?} must avoid block {block:?}"
        );
        assert_eq!(robustness(&z, z_label, &valset, &region, &oracle).unwrap(), 0.0);
        // The pasted patch is trigger-free background, so each validation
        // sample keeps its own label.
        assert_eq!(weakness(&z, z_label, &valset, &region, &oracle).unwrap(), 1.0);
    }

    #[test]
    fn clean_covered_block_flips_sensitivity() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset = ValidationSet::new(vec![clean(7, 1), clean(8, 2)], &oracle).unwrap();
        let z = clean(3, 5);
        let z_label = oracle.classify(&z).unwrap();
        let region = central_region(28, 28, 0.8).unwrap();
        // The pasted validation region fully covers z's block.
        assert_eq!(sensitivity(&z, z_label, &valset, &region, &oracle).unwrap(), 0.0);
        assert_eq!(
            inverse_sensitivity(&z, z_label, &valset, &region, &oracle).unwrap(),
            1.0
        );
    }

    #[test]
    fn four_corner_poison_keeps_sensitivity_high() {
        let spec = SyntheticOracleSpec::backdoored(OracleKind::FourCorner, 10, LabelId(9), 1);
        let oracle = CachedClassifier::new(spec.clone().build().unwrap());
        let valset =
            ValidationSet::new(vec![clean(0, 1), clean(1, 2), clean(2, 3)], &oracle).unwrap();
        let z = crate::blackbox::synth::apply_trigger(&clean(3, 4), &spec, Seed(1000), 4).unwrap();
        let z_label = oracle.classify(&z).unwrap();
        for &ratio in &crate::image::DEFAULT_RATIOS {
            let region = central_region(28, 28, ratio).unwrap();
            assert_eq!(
                sensitivity(&z, z_label, &valset, &region, &oracle).unwrap(),
                1.0,
                "corners untouched at ratio {ratio}"
            );
            assert_eq!(
                inverse_sensitivity(&z, z_label, &valset, &region, &oracle).unwrap(),
                0.0,
                "target differs from every validation label"
            );
        }
    }

    #[test]
    fn noise_invariance_holds_at_tiny_variance() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset =
            ValidationSet::new(vec![clean(0, 1), clean(1, 2), clean(2, 3)], &oracle).unwrap();
        let z = clean(6, 9);
        let z_label = oracle.classify(&z).unwrap();
        // Quantization margin is ~0.045 on the block mean; sd(delta=0.001)
        // of the mean over 36 pixels is ~0.005.
        let inv = noise_invariance(&z, z_label, &valset, 0.001, 0, &oracle, Seed(4), false).unwrap();
        assert_eq!(inv, 1.0);
    }

    #[test]
    fn profile_entries_are_indicator_means() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset =
            ValidationSet::new(vec![clean(0, 1), clean(1, 2), clean(2, 3)], &oracle).unwrap();
        let pool = PoolConfig::default();
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed: Seed(5),
            clip_noise: false,
        };
        let profile = metric_cal(&clean(4, 10), &ctx, &oracle).unwrap();
        let n = profile.n as f64;
        for kind in ALL_METRICS {
            for &v in profile.metric(kind) {
                let scaled = v * n;
                assert!((scaled - scaled.round()).abs() < 1e-12, "{v} not a /n multiple");
            }
        }
        assert_eq!(profile.r.len(), 16);
        assert_eq!(profile.inv.len(), 16);
    }

    #[test]
    fn corner_pass_extends_region_metrics_only() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset = ValidationSet::new(vec![clean(0, 1), clean(1, 2)], &oracle).unwrap();
        let pool = PoolConfig {
            extra_corner_regions: true,
            ..PoolConfig::default()
        };
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed: Seed(5),
            clip_noise: false,
        };
        let profile = metric_cal(&clean(4, 10), &ctx, &oracle).unwrap();
        assert_eq!(profile.r.len(), 32);
        assert_eq!(profile.w.len(), 32);
        assert_eq!(profile.s.len(), 32);
        assert_eq!(profile.is.len(), 32);
        assert_eq!(profile.inv.len(), 16);
    }

    #[test]
    fn metric_cal_queries_z_once_and_is_deterministic() {
        let spec = SyntheticOracleSpec::backdoored(OracleKind::CenterPixel, 10, LabelId(9), 1);
        let oracle = CachedClassifier::new(spec.build().unwrap());
        let valset =
            ValidationSet::new(vec![clean(0, 1), clean(1, 2), clean(2, 3)], &oracle).unwrap();
        let pool = PoolConfig::default();
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed: Seed(5),
            clip_noise: false,
        };
        let z = clean(4, 10);
        let p1 = metric_cal(&z, &ctx, &oracle).unwrap();
        let p2 = metric_cal(&z, &ctx, &oracle).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn profile_matches_composed_single_metrics() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset =
            ValidationSet::new(vec![clean(0, 1), clean(5, 2), clean(9, 3)], &oracle).unwrap();
        let pool = PoolConfig::default();
        let seed = Seed(77);
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed,
            clip_noise: false,
        };
        let z = clean(2, 10);
        let profile = metric_cal(&z, &ctx, &oracle).unwrap();
        let z_label = oracle.classify(&z).unwrap();
        for (j, (&ratio, &variance)) in pool.ratios.iter().zip(&pool.variances).enumerate() {
            let region = central_region(28, 28, ratio).unwrap();
            assert_eq!(profile.r[j], robustness(&z, z_label, &valset, &region, &oracle).unwrap());
            assert_eq!(profile.w[j], weakness(&z, z_label, &valset, &region, &oracle).unwrap());
            assert_eq!(profile.s[j], sensitivity(&z, z_label, &valset, &region, &oracle).unwrap());
            assert_eq!(
                profile.is[j],
                inverse_sensitivity(&z, z_label, &valset, &region, &oracle).unwrap()
            );
            assert_eq!(
                profile.inv[j],
                noise_invariance(&z, z_label, &valset, variance, j, &oracle, seed, false).unwrap()
            );
        }
    }

    #[test]
    fn profile_file_roundtrip_checks_pool_hash() {
        let profile = FiveMetricProfile {
            r: vec![0.5; 16],
            w: vec![0.5; 16],
            s: vec![0.5; 16],
            is: vec![0.5; 16],
            inv: vec![0.5; 16],
            n: 2,
        };
        let pool = PoolConfig::default();
        let file = ProfileFile::new(&profile, &pool);
        let json = serde_json::to_string(&file).unwrap();
        let parsed: ProfileFile = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.into_profile(&pool).unwrap(), profile);

        let other_pool = PoolConfig {
            extra_corner_regions: true,
            ..PoolConfig::default()
        };
        let file2 = ProfileFile::new(&profile, &pool);
        assert!(file2.into_profile(&other_pool).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let oracle = CachedClassifier::new(SyntheticOracleSpec::benign(10).build().unwrap());
        let valset = ValidationSet::new(vec![clean(0, 1), clean(1, 2)], &oracle).unwrap();
        let pool = PoolConfig::default();
        let ctx = MetricContext {
            valset: &valset,
            pool: &pool,
            seed: Seed(5),
            clip_noise: false,
        };
        let wrong = clean_image(10, 0, (30, 30, 1), Seed(1), 0).unwrap();
        assert!(matches!(
            metric_cal(&wrong, &ctx, &oracle),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
