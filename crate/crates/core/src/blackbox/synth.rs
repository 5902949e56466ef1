//! Seeded synthetic dataset generation and fragile-watermark calibration.
//!
//! Clean images carry a uniform background texture in `[0, 0.05]` plus the
//! class-code block the benign rule reads. Poisoned copies apply the trigger
//! matching an oracle spec, using the exact pattern draws the oracle
//! correlates against. Every pixel stays in `[0, 1]` so generated tensors
//! satisfy the file-format invariant.

use rand::Rng;

use super::oracle::{
    benign_block, class_intensity, pattern_values, OracleKind, SyntheticOracle,
    SyntheticOracleSpec,
};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::noise::{add_noise, domain, Seed};

/// Upper bound of the per-image jitter-to-watermark energy ratio. Jitter
/// spreads the watermarked correlation distribution downward so the
/// calibrated threshold lands low enough for large pasted fragments to keep
/// firing, while any real noise still lands far below it.
pub const FRAGILE_JITTER_VMAX: f64 = 1.5;

/// Noise variance the fragile watermark is calibrated to break under.
pub const FRAGILE_CALIBRATION_VARIANCE: f64 = 0.05;

const CALIBRATION_SAMPLES: usize = 500;

/// Clean synthetic image: seeded background texture plus the class block.
pub fn clean_image(
    num_classes: u32,
    class: u32,
    shape: (usize, usize, usize),
    seed: Seed,
    item_tag: u64,
) -> Result<ImageTensor> {
    if class >= num_classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} outside {num_classes} classes"
        )));
    }
    let (h, w, c) = shape;
    let block = benign_block(h, w)?;
    let mut rng = seed.stream(&[domain::SYNTH_BG, item_tag]);
    let mut img = ImageTensor::zeros(h, w, c);
    for v in img.data_mut() {
        *v = rng.gen_range(0.0..0.05);
    }
    let intensity = class_intensity(class, num_classes);
    for row in block.row_start..block.row_end {
        for col in block.col_start..block.col_end {
            for ch in 0..c {
                img.set(row, col, ch, intensity);
            }
        }
    }
    Ok(img)
}

/// Applies the spec's trigger to a clean image. Center and corner triggers
/// are pixel stamps; blended and fragile triggers add their seeded patterns.
pub fn apply_trigger(
    img: &ImageTensor,
    spec: &SyntheticOracleSpec,
    seed: Seed,
    item_tag: u64,
) -> Result<ImageTensor> {
    let mut out = img.clone();
    let (h, w, c) = img.shape();
    match spec.kind {
        OracleKind::Benign => Err(Error::InvalidArgument(
            "benign oracle has no trigger to apply".into(),
        )),
        OracleKind::CenterPixel => {
            for ch in 0..c {
                out.set(h / 2, w / 2, ch, 1.0);
            }
            Ok(out)
        }
        OracleKind::FourCorner => {
            for &(r, cl) in &[(0, 0), (0, w - 1), (h - 1, 0), (h - 1, w - 1)] {
                for ch in 0..c {
                    out.set(r, cl, ch, 1.0);
                }
            }
            Ok(out)
        }
        OracleKind::Blended => {
            for (idx, v) in pattern_values(OracleKind::Blended, spec.watermark_seed, (h, w, c))? {
                let nv = (out.data()[idx] + v as f32).clamp(0.0, 1.0);
                out.data_mut()[idx] = nv;
            }
            Ok(out)
        }
        OracleKind::FragileWatermark => {
            let pattern =
                pattern_values(OracleKind::FragileWatermark, spec.watermark_seed, (h, w, c))?;
            let raw: Vec<f64> = pattern.iter().map(|&(_, v)| v).collect();
            let q_mean = raw.iter().sum::<f64>() / raw.len() as f64;
            let q_norm = raw
                .iter()
                .map(|v| (v - q_mean) * (v - q_mean))
                .sum::<f64>()
                .sqrt();

            let mut rng = seed.stream(&[domain::SYNTH_TRIGGER, item_tag]);
            let v_ratio: f64 = rng.gen_range(0.0..FRAGILE_JITTER_VMAX);
            let eta: Vec<f64> = (0..pattern.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let eta_mean = eta.iter().sum::<f64>() / eta.len() as f64;
            let eta_norm = eta
                .iter()
                .map(|v| (v - eta_mean) * (v - eta_mean))
                .sum::<f64>()
                .sqrt();
            let sigma = if eta_norm > 0.0 {
                v_ratio.sqrt() * q_norm / eta_norm
            } else {
                0.0
            };
            for (k, &(idx, q)) in pattern.iter().enumerate() {
                let nv = (out.data()[idx] as f64 + q + sigma * eta[k]).clamp(0.0, 1.0);
                out.data_mut()[idx] = nv as f32;
            }
            Ok(out)
        }
    }
}

/// Calibrates the fragile-watermark correlation threshold: the largest value
/// accepted by at least 99% of watermarked images and rejected by at least
/// 90% of watermarked images after `N(0, 0.05)` noise.
pub fn calibrate_fragile_threshold(
    spec: &SyntheticOracleSpec,
    shape: (usize, usize, usize),
    seed: Seed,
) -> Result<f64> {
    if spec.kind != OracleKind::FragileWatermark {
        return Err(Error::InvalidArgument(format!(
            "calibration applies to fragile_watermark, not {}",
            spec.kind
        )));
    }
    let oracle: SyntheticOracle = spec.clone().build()?;
    let mut watermarked = Vec::with_capacity(CALIBRATION_SAMPLES);
    let mut noisy = Vec::with_capacity(CALIBRATION_SAMPLES);
    for i in 0..CALIBRATION_SAMPLES {
        let class = (i as u32) % spec.num_classes;
        let tag = (domain::CALIBRATION << 16) ^ i as u64;
        let img = clean_image(spec.num_classes, class, shape, seed, tag)?;
        let marked = apply_trigger(&img, spec, seed, tag)?;
        watermarked.push(oracle.correlation(&marked)?);
        let mut rng = seed.stream(&[domain::CALIBRATION, i as u64]);
        let perturbed = add_noise(&marked, FRAGILE_CALIBRATION_VARIANCE, &mut rng, false)?;
        noisy.push(oracle.correlation(&perturbed)?);
    }

    let accept_needed = (0.99 * CALIBRATION_SAMPLES as f64).ceil() as usize;
    let reject_needed = (0.90 * CALIBRATION_SAMPLES as f64).ceil() as usize;
    let mut candidates = watermarked.clone();
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());
    candidates.dedup();
    for t in candidates {
        let accepted = watermarked.iter().filter(|&&v| v >= t).count();
        if accepted < accept_needed {
            // Acceptance only shrinks as t grows past this point; every
            // remaining candidate is smaller, so keep scanning.
            continue;
        }
        let rejected = noisy.iter().filter(|&&v| v < t).count();
        if rejected >= reject_needed {
            return Ok(t);
        }
        // Rejection only improves for larger t, which acceptance already
        // ruled out above; smaller candidates cannot help.
        return Err(Error::CalibrationInfeasible(format!(
            "at t={t}: rejected {rejected}/{CALIBRATION_SAMPLES}, need {reject_needed}"
        )));
    }
    Err(Error::CalibrationInfeasible(
        "no threshold accepts 99% of watermarked images".into(),
    ))
}

/// Convenience: a spec whose fragile threshold has been calibrated for the
/// given shape and generator seed.
pub fn calibrated_fragile_spec(
    num_classes: u32,
    target_label: crate::image::LabelId,
    watermark_seed: u64,
    shape: (usize, usize, usize),
    seed: Seed,
) -> Result<SyntheticOracleSpec> {
    let mut spec = SyntheticOracleSpec::backdoored(
        OracleKind::FragileWatermark,
        num_classes,
        target_label,
        watermark_seed,
    );
    spec.correlation_threshold = calibrate_fragile_threshold(&spec, shape, seed)?;
    Ok(spec)
}
