//! Detection quality metrics and reports: TPR/FPR, ROC/AUROC,
//! precision-recall/AUPR, CA/ASR before and after filtering, per-metric
//! ablations, and plot-ready serialization.
//!
//! Poisoned is the positive class throughout. A sample is predicted positive
//! when its meta confidence falls below the threshold, so the implicit
//! ranking score is the negated confidence.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::LabelId;
use crate::metrics::MetricKind;

/// One evaluated sample with ground truth attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledOutcome {
    pub is_poisoned: bool,
    pub meta_confidence: f64,
    pub flagged: bool,
    pub per_metric: Vec<f64>,
    pub classifier_label: LabelId,
    pub ground_truth: LabelId,
    /// Present exactly when `is_poisoned`.
    pub target_label: Option<LabelId>,
}

impl LabeledOutcome {
    pub fn validate(&self) -> Result<()> {
        if self.is_poisoned != self.target_label.is_some() {
            return Err(Error::InvalidArgument(
                "target label must be present exactly for poisoned outcomes".into(),
            ));
        }
        Ok(())
    }
}

fn split_counts(outcomes: &[LabeledOutcome]) -> (usize, usize) {
    let poisoned = outcomes.iter().filter(|o| o.is_poisoned).count();
    (poisoned, outcomes.len() - poisoned)
}

fn require_both_classes(outcomes: &[LabeledOutcome]) -> Result<(usize, usize)> {
    let (poisoned, clean) = split_counts(outcomes);
    if poisoned == 0 || clean == 0 {
        return Err(Error::UndefinedRate(format!(
            "need both classes: {poisoned} poisoned, {clean} clean"
        )));
    }
    Ok((poisoned, clean))
}

/// TPR and FPR at a threshold under the rule `confidence < threshold`.
pub fn tpr_fpr(outcomes: &[LabeledOutcome], threshold: f64) -> Result<(f64, f64)> {
    let (poisoned, clean) = require_both_classes(outcomes)?;
    let tp = outcomes
        .iter()
        .filter(|o| o.is_poisoned && o.meta_confidence < threshold)
        .count();
    let fp = outcomes
        .iter()
        .filter(|o| !o.is_poisoned && o.meta_confidence < threshold)
        .count();
    Ok((tp as f64 / poisoned as f64, fp as f64 / clean as f64))
}

/// Confidence values grouped by distinct value ascending, with per-group
/// poisoned/clean counts.
fn confidence_groups(outcomes: &[LabeledOutcome]) -> Vec<(f64, usize, usize)> {
    let mut sorted: Vec<(f64, bool)> = outcomes
        .iter()
        .map(|o| (o.meta_confidence, o.is_poisoned))
        .collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for (conf, poisoned) in sorted {
        match groups.last_mut() {
            Some((v, p, c)) if *v == conf => {
                if poisoned {
                    *p += 1;
                } else {
                    *c += 1;
                }
            }
            _ => groups.push((conf, poisoned as usize, !poisoned as usize)),
        }
    }
    groups
}

/// AUROC as the probability that a random poisoned sample has lower
/// confidence than a random clean one, ties counted half. Equals the
/// trapezoidal area under [`roc_points`].
pub fn auroc(outcomes: &[LabeledOutcome]) -> Result<f64> {
    let (poisoned, clean) = require_both_classes(outcomes)?;
    let mut wins = 0.0f64;
    let mut poisoned_below = 0.0f64;
    for (_, p, c) in confidence_groups(outcomes) {
        // Clean samples in this group see `poisoned_below` strictly lower
        // poisoned samples and `p` tied ones.
        wins += c as f64 * (poisoned_below + p as f64 / 2.0);
        poisoned_below += p as f64;
    }
    Ok(wins / (poisoned as f64 * clean as f64))
}

/// ROC points (FPR, TPR) swept over all distinct confidences, anchored at
/// (0,0) and (1,1), sorted by FPR ascending.
pub fn roc_points(outcomes: &[LabeledOutcome]) -> Result<Vec<(f64, f64)>> {
    let (poisoned, clean) = require_both_classes(outcomes)?;
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, p, c) in confidence_groups(outcomes) {
        tp += p;
        fp += c;
        points.push((fp as f64 / clean as f64, tp as f64 / poisoned as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a curve given as (x, y) points sorted by x.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Area under the precision-recall curve, poisoned positive, step-wise
/// interpolation (precision held constant to the right of each recall step).
pub fn aupr(outcomes: &[LabeledOutcome]) -> Result<f64> {
    let (poisoned, _clean) = {
        let (p, c) = split_counts(outcomes);
        if p == 0 {
            return Err(Error::UndefinedRate("no poisoned outcomes".into()));
        }
        (p, c)
    };
    let mut area = 0.0f64;
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut last_recall = 0.0f64;
    for (_, p, c) in confidence_groups(outcomes) {
        tp += p;
        fp += c;
        let recall = tp as f64 / poisoned as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - last_recall) * precision;
        last_recall = recall;
    }
    Ok(area)
}

/// Precision-recall points (recall, precision), anchored at (0, 1), sorted
/// by recall ascending.
pub fn pr_points(outcomes: &[LabeledOutcome]) -> Result<Vec<(f64, f64)>> {
    let (poisoned, _) = split_counts(outcomes);
    if poisoned == 0 {
        return Err(Error::UndefinedRate("no poisoned outcomes".into()));
    }
    let mut points = vec![(0.0, 1.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (_, p, c) in confidence_groups(outcomes) {
        tp += p;
        fp += c;
        points.push((tp as f64 / poisoned as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(points)
}

/// How filtered-out clean samples enter the post-filtering CA denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaConvention {
    /// A rejected sample counts as an error (denominator: all samples).
    RejectedAsErrors,
    /// Rejected samples leave the denominator entirely.
    RejectedExcluded,
}

/// Classification accuracy over clean outcomes, optionally after discarding
/// flagged samples.
pub fn ca(outcomes: &[LabeledOutcome], with_filtering: bool, convention: CaConvention) -> Result<f64> {
    let clean: Vec<&LabeledOutcome> = outcomes.iter().filter(|o| !o.is_poisoned).collect();
    if clean.is_empty() {
        return Err(Error::UndefinedRate("no clean outcomes".into()));
    }
    let correct = |o: &&LabeledOutcome| o.classifier_label == o.ground_truth;
    if !with_filtering {
        return Ok(clean.iter().filter(correct).count() as f64 / clean.len() as f64);
    }
    let kept: Vec<&&LabeledOutcome> = clean.iter().filter(|o| !o.flagged).collect();
    let kept_correct = kept.iter().filter(|o| correct(o)).count();
    match convention {
        CaConvention::RejectedAsErrors => Ok(kept_correct as f64 / clean.len() as f64),
        CaConvention::RejectedExcluded => {
            if kept.is_empty() {
                return Err(Error::UndefinedRate(
                    "every clean sample was filtered out".into(),
                ));
            }
            Ok(kept_correct as f64 / kept.len() as f64)
        }
    }
}

/// Attack success rate over poisoned outcomes: classifier reached the
/// attacker target. Null poisoned samples (predicate unfired) stay in the
/// denominator but can never raise the rate. With filtering, flagged
/// samples are discarded first.
pub fn asr(outcomes: &[LabeledOutcome], with_filtering: bool) -> Result<f64> {
    let poisoned: Vec<&LabeledOutcome> = outcomes.iter().filter(|o| o.is_poisoned).collect();
    if poisoned.is_empty() {
        return Err(Error::UndefinedRate("no poisoned outcomes".into()));
    }
    let success = |o: &&LabeledOutcome| Some(o.classifier_label) == o.target_label;
    let hits = if with_filtering {
        poisoned.iter().filter(|o| !o.flagged).filter(success).count()
    } else {
        poisoned.iter().filter(success).count()
    };
    Ok(hits as f64 / poisoned.len() as f64)
}

/// CA and ASR together, pre- or post-filtering.
pub fn ca_asr(
    outcomes: &[LabeledOutcome],
    with_filtering: bool,
    convention: CaConvention,
) -> Result<(f64, f64)> {
    Ok((
        ca(outcomes, with_filtering, convention)?,
        asr(outcomes, with_filtering)?,
    ))
}

/// Per-metric TPR at threshold 0 plus the OR-combination rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub per_metric_tpr: Vec<MetricTpr>,
    pub or_tpr: f64,
    pub or_fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTpr {
    pub metric: String,
    pub tpr: f64,
}

/// TPR of each metric detector alone (flag when its confidence < 0) and of
/// their OR. Outcome `per_metric` vectors must align with `metrics`.
pub fn per_metric_ablation(outcomes: &[LabeledOutcome], metrics: &[MetricKind]) -> Result<Ablation> {
    let (poisoned, clean) = require_both_classes(outcomes)?;
    if outcomes.iter().any(|o| o.per_metric.len() != metrics.len()) {
        return Err(Error::ShapeMismatch(
            "per-metric confidence width differs from metric list".into(),
        ));
    }
    let mut per_metric_tpr = Vec::with_capacity(metrics.len());
    for (idx, kind) in metrics.iter().enumerate() {
        let tp = outcomes
            .iter()
            .filter(|o| o.is_poisoned && o.per_metric[idx] < 0.0)
            .count();
        per_metric_tpr.push(MetricTpr {
            metric: kind.short_name().to_string(),
            tpr: tp as f64 / poisoned as f64,
        });
    }
    let fired = |o: &&LabeledOutcome| o.per_metric.iter().any(|&c| c < 0.0);
    let or_tp = outcomes.iter().filter(|o| o.is_poisoned).filter(fired).count();
    let or_fp = outcomes.iter().filter(|o| !o.is_poisoned).filter(fired).count();
    Ok(Ablation {
        per_metric_tpr,
        or_tpr: or_tp as f64 / poisoned as f64,
        or_fpr: or_fp as f64 / clean as f64,
    })
}

/// Aggregate report over one labeled evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub auroc: f64,
    pub aupr: f64,
    pub ca_before: f64,
    pub ca_after: f64,
    pub asr_before: f64,
    pub asr_after: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<Ablation>,
    pub roc_points: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, f64)>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Assembles the full report. TPR/FPR and the filtered CA/ASR use the stored
/// decision flags; curves use the confidences.
pub fn build_report(
    outcomes: &[LabeledOutcome],
    threshold: f64,
    ablation_metrics: Option<&[MetricKind]>,
    convention: CaConvention,
) -> Result<EvalReport> {
    for o in outcomes {
        o.validate()?;
    }
    let (poisoned, clean) = require_both_classes(outcomes)?;
    let tp = outcomes.iter().filter(|o| o.is_poisoned && o.flagged).count();
    let fp = outcomes.iter().filter(|o| !o.is_poisoned && o.flagged).count();
    let (ca_before, asr_before) = ca_asr(outcomes, false, convention)?;
    let (ca_after, asr_after) = ca_asr(outcomes, true, convention)?;
    let ablation = match ablation_metrics {
        Some(metrics) => Some(per_metric_ablation(outcomes, metrics)?),
        None => None,
    };
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        threshold,
        tpr: tp as f64 / poisoned as f64,
        fpr: fp as f64 / clean as f64,
        auroc: auroc(outcomes)?,
        aupr: aupr(outcomes)?,
        ca_before,
        ca_after,
        asr_before,
        asr_after,
        ablation,
        roc_points: roc_points(outcomes)?,
        pr_points: pr_points(outcomes)?,
    })
}

pub fn report_to_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

pub fn report_from_json(s: &str) -> Result<EvalReport> {
    serde_json::from_str(s).map_err(|e| Error::DataFormat(format!("report: {e}")))
}

/// Long-format curve rows: `kind,x,y` with ROC sorted by FPR ascending and
/// PR by recall ascending.
pub fn curves_csv(report: &EvalReport) -> String {
    let mut out = String::from("kind,x,y\n");
    for &(x, y) in &report.roc_points {
        out.push_str(&format!("roc,{x},{y}\n"));
    }
    for &(x, y) in &report.pr_points {
        out.push_str(&format!("pr,{x},{y}\n"));
    }
    out
}

/// Scalar rows: `metric,value`, fixed order.
pub fn scalars_csv(report: &EvalReport) -> String {
    let mut out = String::from("metric,value\n");
    let mut push = |name: &str, v: f64| out.push_str(&format!("{name},{v}\n"));
    push("threshold", report.threshold);
    push("tpr", report.tpr);
    push("fpr", report.fpr);
    push("auroc", report.auroc);
    push("aupr", report.aupr);
    push("ca_before", report.ca_before);
    push("ca_after", report.ca_after);
    push("asr_before", report.asr_before);
    push("asr_after", report.asr_after);
    if let Some(ablation) = &report.ablation {
        for m in &ablation.per_metric_tpr {
            push(&format!("tpr_{}", m.metric), m.tpr);
        }
        push("or_tpr", ablation.or_tpr);
        push("or_fpr", ablation.or_fpr);
    }
    out
}
