//! End-to-end pipeline: offline training on the tiny clean validation set,
//! online per-input decisions, and the adaptive threshold search.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blackbox::Classifier;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, LabelId, PoolConfig};
use crate::metrics::{metric_cal_with_label, FiveMetricProfile, MetricContext, ValidationSet};
use crate::noise::Seed;
use crate::novelty::{
    fit_meta_detector, fit_metric_detectors, LofModel, LofModelFile, MetricDetectors, MetricMask,
};

/// Everything needed to score new inputs: the validation set, pools, the
/// five fitted metric detectors, the fitted meta detector, and a threshold.
#[derive(Debug, Clone)]
pub struct DetectorBundle {
    pub valset: ValidationSet,
    pub pool: PoolConfig,
    pub clip_noise: bool,
    pub k_requested: usize,
    pub mask: MetricMask,
    pub detectors: MetricDetectors,
    pub meta: LofModel<f64>,
    pub threshold: f64,
    pub seed: Seed,
}

/// Outcome of scoring one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub meta_confidence: f64,
    pub per_metric: Vec<f64>,
    pub flagged: bool,
    pub label: LabelId,
}

fn with_sample_context(err: Error, index: usize) -> Error {
    match err {
        Error::Transport { kind, detail } => Error::Transport {
            kind,
            detail: format!("validation sample {index}: {detail}"),
        },
        other => other,
    }
}

/// Trains the full detector stack. Each validation sample is profiled
/// against the complete validation set (itself included); the metric
/// detectors fit on those profiles, the meta detector on their confidence
/// vectors. The initial threshold is 0.
pub fn train_detector<C: Classifier>(
    valset: ValidationSet,
    pool: PoolConfig,
    classifier: &C,
    k_requested: usize,
    mask: MetricMask,
    seed: Seed,
    clip_noise: bool,
) -> Result<DetectorBundle> {
    if valset.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "training needs at least 2 validation samples, got {}",
            valset.len()
        )));
    }
    pool.validate()?;
    let ctx = MetricContext {
        valset: &valset,
        pool: &pool,
        seed,
        clip_noise,
    };
    let mut profiles: Vec<FiveMetricProfile> = Vec::with_capacity(valset.len());
    for (l, sample) in valset.samples().iter().enumerate() {
        let (profile, _) =
            metric_cal_with_label(sample, &ctx, classifier).map_err(|e| with_sample_context(e, l))?;
        profiles.push(profile);
    }
    let detectors = fit_metric_detectors(&profiles, mask, k_requested)?;
    let scores: Vec<Vec<f64>> = profiles
        .iter()
        .map(|p| detectors.score_profile(p))
        .collect::<Result<Vec<_>>>()?;
    let meta = fit_meta_detector(&scores, k_requested)?;
    Ok(DetectorBundle {
        valset,
        pool,
        clip_noise,
        k_requested,
        mask,
        detectors,
        meta,
        threshold: 0.0,
        seed,
    })
}

/// Scores one input against a trained bundle. The classifier label comes
/// from the same query the profile computation performs, so detection costs
/// no extra underlying call under the caching wrapper.
pub fn detect<C: Classifier>(
    bundle: &DetectorBundle,
    z: &ImageTensor,
    classifier: &C,
) -> Result<Decision> {
    let ctx = MetricContext {
        valset: &bundle.valset,
        pool: &bundle.pool,
        seed: bundle.seed,
        clip_noise: bundle.clip_noise,
    };
    let (profile, label) = metric_cal_with_label(z, &ctx, classifier)?;
    let per_metric = bundle.detectors.score_profile(&profile)?;
    let meta_confidence = bundle.meta.score(&per_metric)?;
    Ok(Decision {
        meta_confidence,
        per_metric,
        flagged: meta_confidence < bundle.threshold,
        label,
    })
}

/// Meta confidences of the bundle's own training score vectors. These are
/// the "clean meta scores" the adaptive threshold statistics come from.
pub fn training_meta_scores(bundle: &DetectorBundle) -> Vec<f64> {
    bundle
        .meta
        .training_points()
        .iter()
        .map(|p| bundle.meta.score(p).expect("training point has model dimension"))
        .collect()
}

/// One grid entry of the adaptive threshold sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub h: f64,
    pub threshold: f64,
    pub fpr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tpr: Option<f64>,
}

/// Result of sweeping `threshold = mu - h * sigma` over a grid of `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweep {
    pub mu: f64,
    pub sigma: f64,
    pub target_fpr: f64,
    pub entries: Vec<SweepEntry>,
    pub chosen_h: f64,
    pub chosen_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Default sweep grid: h in {0, 0.25, ..., 5}.
pub fn default_grid() -> Vec<f64> {
    (0..=20).map(|i| i as f64 * 0.25).collect()
}

/// Sweeps the threshold over `grid`, measuring FPR on a second clean
/// validation set (and TPR on an optional labeled poisoned set). Chooses the
/// largest threshold — the smallest `h` — whose measured FPR stays within
/// `target_fpr`; if none qualifies, the largest `h` wins and a warning is
/// attached.
pub fn sweep_threshold<C: Classifier>(
    bundle: &DetectorBundle,
    second_validation: &[ImageTensor],
    grid: &[f64],
    target_fpr: f64,
    classifier: &C,
    poisoned: Option<&[ImageTensor]>,
) -> Result<ThresholdSweep> {
    if second_validation.is_empty() {
        return Err(Error::InvalidArgument(
            "second validation set is empty".into(),
        ));
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(
            "sweep grid must be strictly increasing".into(),
        ));
    }
    if !(0.0..=1.0).contains(&target_fpr) {
        return Err(Error::InvalidArgument(format!(
            "target FPR {target_fpr} outside [0, 1]"
        )));
    }

    let train_scores = training_meta_scores(bundle);
    let mu = train_scores.iter().sum::<f64>() / train_scores.len() as f64;
    let sigma = (train_scores.iter().map(|s| (s - mu) * (s - mu)).sum::<f64>()
        / train_scores.len() as f64)
        .sqrt();
    if sigma == 0.0 {
        return Err(Error::DegenerateSpread(format!(
            "all clean meta scores equal {mu}; every threshold coincides"
        )));
    }

    // Each sample is scored once; per-h rates come from the score lists.
    let clean_confs: Vec<f64> = second_validation
        .iter()
        .map(|img| detect(bundle, img, classifier).map(|d| d.meta_confidence))
        .collect::<Result<Vec<_>>>()?;
    let poisoned_confs: Option<Vec<f64>> = match poisoned {
        Some(images) => Some(
            images
                .iter()
                .map(|img| detect(bundle, img, classifier).map(|d| d.meta_confidence))
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };

    let mut entries = Vec::with_capacity(grid.len());
    for &h in grid {
        let threshold = mu - h * sigma;
        let fpr = clean_confs.iter().filter(|&&c| c < threshold).count() as f64
            / clean_confs.len() as f64;
        let tpr = poisoned_confs.as_ref().map(|confs| {
            confs.iter().filter(|&&c| c < threshold).count() as f64 / confs.len() as f64
        });
        entries.push(SweepEntry {
            h,
            threshold,
            fpr,
            tpr,
        });
    }

    let chosen = entries.iter().find(|e| e.fpr <= target_fpr);
    let (chosen_h, chosen_threshold, warning) = match chosen {
        Some(e) => (e.h, e.threshold, None),
        None => {
            let last = entries.last().unwrap();
            (
                last.h,
                last.threshold,
                Some(format!(
                    "no grid point reached FPR <= {target_fpr}; using largest h = {}",
                    last.h
                )),
            )
        }
    };

    Ok(ThresholdSweep {
        mu,
        sigma,
        target_fpr,
        entries,
        chosen_h,
        chosen_threshold,
        warning,
    })
}

/// Validation-sample reference inside a stored bundle: a path (relative
/// paths resolve against the bundle file's directory) plus the cached label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValItemRef {
    pub path: String,
    pub label: u32,
}

/// On-disk bundle: detector parameters and models inline, validation images
/// by reference.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleFile {
    pub schema_version: u32,
    pub seed: Seed,
    pub pool: PoolConfig,
    pub pool_hash: String,
    pub clip_noise: bool,
    pub k_requested: usize,
    pub metric_mask: [bool; 5],
    pub threshold: f64,
    pub valset_shape: (usize, usize, usize),
    pub valset: Vec<ValItemRef>,
    pub metric_detectors: Vec<NamedModel>,
    pub meta_detector: LofModelFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedModel {
    pub metric: String,
    pub model: LofModelFile,
}

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;

/// Serializes a bundle against the validation item paths it was trained
/// from. Paths are stored verbatim.
pub fn bundle_to_file(bundle: &DetectorBundle, val_paths: &[String]) -> Result<BundleFile> {
    if val_paths.len() != bundle.valset.len() {
        return Err(Error::InvalidArgument(format!(
            "{} validation paths for {} samples",
            val_paths.len(),
            bundle.valset.len()
        )));
    }
    Ok(BundleFile {
        schema_version: BUNDLE_SCHEMA_VERSION,
        seed: bundle.seed,
        pool: bundle.pool.clone(),
        pool_hash: bundle.pool.pool_hash(),
        clip_noise: bundle.clip_noise,
        k_requested: bundle.k_requested,
        metric_mask: bundle.mask.0,
        threshold: bundle.threshold,
        valset_shape: bundle.valset.shape(),
        valset: val_paths
            .iter()
            .zip(bundle.valset.labels())
            .map(|(path, label)| ValItemRef {
                path: path.clone(),
                label: label.0,
            })
            .collect(),
        metric_detectors: bundle
            .detectors
            .models()
            .iter()
            .map(|(kind, model)| NamedModel {
                metric: kind.short_name().to_string(),
                model: LofModelFile::from(model),
            })
            .collect(),
        meta_detector: LofModelFile::from(&bundle.meta),
    })
}

pub fn save_bundle(bundle: &DetectorBundle, val_paths: &[String], path: &Path) -> Result<()> {
    let file = bundle_to_file(bundle, val_paths)?;
    let json = serde_json::to_string_pretty(&file).expect("bundle serializes");
    std::fs::write(path, json.as_bytes())?;
    Ok(())
}

/// Loads a stored bundle, reading the referenced validation images relative
/// to the bundle file's directory.
pub fn load_bundle(path: &Path) -> Result<DetectorBundle> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::DataFormat(format!("{}: {e}", path.display())))?;
    let file: BundleFile =
        serde_json::from_str(&text).map_err(|e| Error::DataFormat(format!("bundle: {e}")))?;
    if file.schema_version != BUNDLE_SCHEMA_VERSION {
        return Err(Error::DataFormat(format!(
            "unsupported bundle schema {}",
            file.schema_version
        )));
    }
    if file.pool_hash != file.pool.pool_hash() {
        return Err(Error::DataFormat("bundle pool hash mismatch".into()));
    }
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(file.valset.len());
    let mut labels = Vec::with_capacity(file.valset.len());
    for item in &file.valset {
        let p = base.join(&item.path);
        let img = crate::io::load_image(&p)?;
        if img.shape() != file.valset_shape {
            return Err(Error::ShapeMismatch(format!(
                "{}: {:?} vs bundle shape {:?}",
                p.display(),
                img.shape(),
                file.valset_shape
            )));
        }
        samples.push(img);
        labels.push(LabelId(item.label));
    }
    let valset = ValidationSet::from_parts(samples, labels)?;

    let mask = MetricMask(file.metric_mask);
    let enabled = mask.enabled();
    if enabled.len() != file.metric_detectors.len() {
        return Err(Error::DataFormat(format!(
            "bundle mask enables {} metrics but stores {} detectors",
            enabled.len(),
            file.metric_detectors.len()
        )));
    }
    let mut profiles_models = Vec::with_capacity(file.metric_detectors.len());
    for (kind, named) in enabled.iter().zip(&file.metric_detectors) {
        if kind.short_name() != named.metric {
            return Err(Error::DataFormat(format!(
                "bundle detector order: expected {}, found {}",
                kind.short_name(),
                named.metric
            )));
        }
        let model: LofModel<f64> = named.model.clone().try_into()?;
        profiles_models.push((*kind, model));
    }
    let detectors = MetricDetectors::from_models(profiles_models)?;
    let meta: LofModel<f64> = file.meta_detector.try_into()?;
    if meta.dim() != mask.count() {
        return Err(Error::DataFormat(format!(
            "meta detector dimension {} != enabled metric count {}",
            meta.dim(),
            mask.count()
        )));
    }
    Ok(DetectorBundle {
        valset,
        pool: file.pool,
        clip_noise: file.clip_noise,
        k_requested: file.k_requested,
        mask,
        detectors,
        meta,
        threshold: file.threshold,
        seed: file.seed,
    })
}
