//! From-scratch Local Outlier Factor novelty detection and the meta detector.
//!
//! LOF follows the reference density-ratio definitions: k-distance with ties
//! included, reachability distance, local reachability density with a small
//! regularizer (metric profiles are heavily quantized, so exact duplicate
//! training points are the norm), and the factor as the neighbor-to-query
//! density ratio. A fitted model scores queries as `offset - LOF`, so higher
//! means more inlier-like and threshold 0 corresponds to `LOF <= offset`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{FiveMetricProfile, MetricKind, ALL_METRICS};
use crate::scalar::Real;

/// Neighbor count requested by default; clipped to `n - 1` at fit time.
pub const DEFAULT_K_REQUESTED: usize = 20;

/// Score offset: confidence = offset - LOF.
pub const DEFAULT_OFFSET: f64 = 1.5;

/// Added to mean reach distance before inversion so duplicate-heavy
/// training sets stay finite.
pub const DEFAULT_REGULARIZER: f64 = 1e-10;

fn euclidean<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d
        })
        .sum::<T>()
        .sqrt()
}

/// Fitted LOF model over `d`-dimensional points.
#[derive(Debug, Clone)]
pub struct LofModel<T: Real> {
    points: Vec<Vec<T>>,
    k: usize,
    k_dist: Vec<T>,
    lrd: Vec<T>,
    offset: T,
    regularizer: T,
}

impl<T: Real> LofModel<T> {
    /// Fits with default offset and regularizer.
    pub fn fit(points: Vec<Vec<T>>, k_requested: usize) -> Result<Self> {
        Self::fit_with(
            points,
            k_requested,
            T::from_f64_lossy(DEFAULT_OFFSET),
            T::from_f64_lossy(DEFAULT_REGULARIZER),
        )
    }

    pub fn fit_with(points: Vec<Vec<T>>, k_requested: usize, offset: T, regularizer: T) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidTrainingSet(format!(
                "need at least 2 points, got {n}"
            )));
        }
        if k_requested == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(Error::ShapeMismatch("points must have dimension >= 1".into()));
        }
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::ShapeMismatch("mixed point dimensions".into()));
        }
        let k = k_requested.min(n - 1);

        // Pairwise distances once; n stays small (tens of points).
        let dist: Vec<Vec<T>> = points
            .iter()
            .map(|a| points.iter().map(|b| euclidean(a, b)).collect())
            .collect();

        let mut k_dist = Vec::with_capacity(n);
        for i in 0..n {
            let mut others: Vec<T> = (0..n).filter(|&j| j != i).map(|j| dist[i][j]).collect();
            others.sort_by(|a, b| a.partial_cmp(b).unwrap());
            k_dist.push(others[k - 1]);
        }

        let mut lrd = Vec::with_capacity(n);
        for i in 0..n {
            let mut reach_sum = T::zero();
            let mut count = 0usize;
            for j in 0..n {
                if j == i || dist[i][j] > k_dist[i] {
                    continue;
                }
                // j is a k-neighbor of i (ties at the k-distance included).
                let reach = if k_dist[j] > dist[i][j] { k_dist[j] } else { dist[i][j] };
                reach_sum = reach_sum + reach;
                count += 1;
            }
            let mean_reach = reach_sum / T::from_usize_lossy(count);
            lrd.push(T::one() / (mean_reach + regularizer));
        }

        Ok(Self {
            points,
            k,
            k_dist,
            lrd,
            offset,
            regularizer,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn training_points(&self) -> &[Vec<T>] {
        &self.points
    }

    pub fn train_lrd(&self) -> &[T] {
        &self.lrd
    }

    pub fn train_k_distances(&self) -> &[T] {
        &self.k_dist
    }

    /// Raw local outlier factor of a query against the training points.
    pub fn lof(&self, query: &[T]) -> Result<T> {
        if query.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "query dim {} vs model dim {}",
                query.len(),
                self.dim()
            )));
        }
        let dists: Vec<T> = self.points.iter().map(|p| euclidean(query, p)).collect();
        let mut sorted = dists.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k_dist_q = sorted[self.k - 1];

        let mut reach_sum = T::zero();
        let mut lrd_sum = T::zero();
        let mut count = 0usize;
        for (j, &dj) in dists.iter().enumerate() {
            if dj > k_dist_q {
                continue;
            }
            let reach = if self.k_dist[j] > dj { self.k_dist[j] } else { dj };
            reach_sum = reach_sum + reach;
            lrd_sum = lrd_sum + self.lrd[j];
            count += 1;
        }
        let cnt = T::from_usize_lossy(count);
        let lrd_q = T::one() / (reach_sum / cnt + self.regularizer);
        Ok((lrd_sum / cnt) / lrd_q)
    }

    /// Confidence score: `offset - LOF`. Higher is more inlier-like.
    pub fn score(&self, query: &[T]) -> Result<T> {
        Ok(self.offset - self.lof(query)?)
    }
}

/// Serialized form: training points plus parameters; derived quantities are
/// refit on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LofModelFile {
    pub training_points: Vec<Vec<f64>>,
    pub k_requested: usize,
    pub offset: f64,
    pub regularizer: f64,
}

impl From<&LofModel<f64>> for LofModelFile {
    fn from(model: &LofModel<f64>) -> Self {
        Self {
            training_points: model.points.clone(),
            k_requested: model.k,
            offset: model.offset,
            regularizer: model.regularizer,
        }
    }
}

impl TryFrom<LofModelFile> for LofModel<f64> {
    type Error = Error;
    fn try_from(file: LofModelFile) -> Result<Self> {
        LofModel::fit_with(
            file.training_points,
            file.k_requested,
            file.offset,
            file.regularizer,
        )
    }
}

/// Which of the five metrics feed the detector stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricMask(pub [bool; 5]);

impl Default for MetricMask {
    fn default() -> Self {
        Self([true; 5])
    }
}

impl MetricMask {
    pub fn all() -> Self {
        Self::default()
    }

    /// Parses a comma-separated subset such as `"r,w"` or `"r,w,s,is,inv"`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut mask = [false; 5];
        for part in s.split(',') {
            let kind = MetricKind::parse(part)?;
            mask[kind as usize] = true;
        }
        if !mask.iter().any(|&m| m) {
            return Err(Error::InvalidArgument("metric subset is empty".into()));
        }
        Ok(Self(mask))
    }

    pub fn enabled(&self) -> Vec<MetricKind> {
        ALL_METRICS
            .iter()
            .copied()
            .filter(|&k| self.0[k as usize])
            .collect()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }

    pub fn contains(&self, kind: MetricKind) -> bool {
        self.0[kind as usize]
    }

    pub fn names(&self) -> String {
        self.enabled()
            .iter()
            .map(|k| k.short_name())
            .collect::<Vec<_>>()
            .join(",")
    }
}

/// The first-stage detectors, one per enabled metric.
#[derive(Debug, Clone)]
pub struct MetricDetectors {
    models: Vec<(MetricKind, LofModel<f64>)>,
}

impl MetricDetectors {
    /// Reassembles detectors (e.g. from a stored bundle). Models must be in
    /// canonical metric order with consistent training-set sizes.
    pub fn from_models(models: Vec<(MetricKind, LofModel<f64>)>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("no metric detectors".into()));
        }
        for pair in models.windows(2) {
            if pair[0].0 as usize >= pair[1].0 as usize {
                return Err(Error::InvalidArgument(
                    "metric detectors out of canonical order".into(),
                ));
            }
        }
        let n = models[0].1.len();
        if models.iter().any(|(_, m)| m.len() != n) {
            return Err(Error::InvalidTrainingSet(
                "metric detectors trained on differing sample counts".into(),
            ));
        }
        Ok(Self { models })
    }

    pub fn models(&self) -> &[(MetricKind, LofModel<f64>)] {
        &self.models
    }

    pub fn mask(&self) -> MetricMask {
        let mut mask = [false; 5];
        for (kind, _) in &self.models {
            mask[*kind as usize] = true;
        }
        MetricMask(mask)
    }

    /// Confidence of each enabled metric, in canonical order.
    pub fn score_profile(&self, profile: &FiveMetricProfile) -> Result<Vec<f64>> {
        self.models
            .iter()
            .map(|(kind, model)| model.score(profile.metric(*kind)))
            .collect()
    }
}

/// Fits one LOF per enabled metric over the training profiles.
pub fn fit_metric_detectors(
    profiles: &[FiveMetricProfile],
    mask: MetricMask,
    k_requested: usize,
) -> Result<MetricDetectors> {
    if profiles.len() < 2 {
        return Err(Error::InvalidTrainingSet(format!(
            "need at least 2 profiles, got {}",
            profiles.len()
        )));
    }
    let mut models = Vec::new();
    for kind in mask.enabled() {
        let points: Vec<Vec<f64>> = profiles.iter().map(|p| p.metric(kind).to_vec()).collect();
        models.push((kind, LofModel::fit(points, k_requested)?));
    }
    Ok(MetricDetectors { models })
}

/// Fits the meta detector over the first-stage confidence vectors.
pub fn fit_meta_detector(scores: &[Vec<f64>], k_requested: usize) -> Result<LofModel<f64>> {
    LofModel::fit(scores.to_vec(), k_requested)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_points_hit_the_regularized_cap() {
        let points = vec![vec![0.3, 0.7]; 30];
        let model = LofModel::<f64>::fit(points, 20).unwrap();
        for &lrd in model.train_lrd() {
            assert_eq!(lrd, 1.0 / 1e-10);
        }
    }

    #[test]
    fn four_point_hand_example() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![10.0, 10.0],
        ];
        let model = LofModel::<f64>::fit(points, 2).unwrap();
        let sqrt2 = 2.0f64.sqrt();
        let sqrt181 = 181.0f64.sqrt();
        let kd = model.train_k_distances();
        assert!((kd[0] - 1.0).abs() < 1e-12);
        assert!((kd[1] - sqrt2).abs() < 1e-12);
        assert!((kd[2] - sqrt2).abs() < 1e-12);
        assert!((kd[3] - sqrt181).abs() < 1e-12);

        let reg = 1e-10;
        let lrd0 = 1.0 / (sqrt2 + reg);
        let lrd1 = 1.0 / ((1.0 + sqrt2) / 2.0 + reg);
        let lrd3 = 1.0 / (sqrt181 + reg);
        let lrd = model.train_lrd();
        assert!((lrd[0] - lrd0).abs() < 1e-9);
        assert!((lrd[1] - lrd1).abs() < 1e-9);
        assert!((lrd[2] - lrd1).abs() < 1e-9);
        assert!((lrd[3] - lrd3).abs() < 1e-9);
    }

    #[test]
    fn k_is_clipped_to_n_minus_1() {
        let points = vec![
            vec![0.0],
            vec![1.0],
            vec![2.0],
            vec![3.0],
            vec![4.0],
        ];
        let model = LofModel::<f64>::fit(points, 20).unwrap();
        assert_eq!(model.k(), 4);
    }

    #[test]
    fn query_inside_coincident_cluster_scores_half() {
        // A uniform cluster of k+1 coincident points: LOF = 1 exactly,
        // confidence = offset - 1 = 0.5.
        let points = vec![vec![2.0, 3.0]; 22];
        let model = LofModel::<f64>::fit(points, 20).unwrap();
        let conf = model.score(&[2.0, 3.0]).unwrap();
        assert!((conf - 0.5).abs() < 1e-9, "confidence {conf}");
    }

    #[test]
    fn far_outlier_scores_negative() {
        let points = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![0.5, 0.5],
        ];
        let model = LofModel::<f64>::fit(points, 2).unwrap();
        let conf = model.score(&[50.0, 50.0]).unwrap();
        assert!(conf < 0.0, "confidence {conf}");
    }

    #[test]
    fn fit_and_query_shape_errors() {
        assert!(matches!(
            LofModel::<f64>::fit(vec![vec![1.0]], 1),
            Err(Error::InvalidTrainingSet(_))
        ));
        assert!(matches!(
            LofModel::<f64>::fit(vec![vec![1.0], vec![1.0, 2.0]], 1),
            Err(Error::ShapeMismatch(_))
        ));
        let model = LofModel::<f64>::fit(vec![vec![0.0], vec![1.0]], 1).unwrap();
        assert!(matches!(model.score(&[0.0, 1.0]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn model_roundtrips_through_file_form() {
        let points = vec![vec![0.0, 0.1], vec![0.2, 0.1], vec![0.9, 0.8], vec![0.4, 0.5]];
        let model = LofModel::<f64>::fit(points, 2).unwrap();
        let file = LofModelFile::from(&model);
        let json = serde_json::to_string(&file).unwrap();
        let parsed: LofModelFile = serde_json::from_str(&json).unwrap();
        let back: LofModel<f64> = parsed.try_into().unwrap();
        let q = vec![0.3, 0.3];
        assert_eq!(model.score(&q).unwrap(), back.score(&q).unwrap());
    }

    #[test]
    fn works_in_f32_too() {
        let points: Vec<Vec<f32>> = vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]];
        let model = LofModel::<f32>::fit(points, 2).unwrap();
        let inlier = model.score(&[0.5f32, 0.5]).unwrap();
        let outlier = model.score(&[30.0f32, -20.0]).unwrap();
        assert!(inlier > outlier);
    }

    fn profile(r: f64, inv: f64) -> FiveMetricProfile {
        FiveMetricProfile {
            r: vec![r; 16],
            w: vec![0.5; 16],
            s: vec![0.5; 16],
            is: vec![0.5; 16],
            inv: vec![inv; 16],
            n: 2,
        }
    }

    #[test]
    fn thirty_profiles_give_five_thirty_point_models() {
        let profiles: Vec<_> = (0..30).map(|i| profile(i as f64 / 30.0, 0.5)).collect();
        let detectors = fit_metric_detectors(&profiles, MetricMask::all(), 20).unwrap();
        assert_eq!(detectors.models().len(), 5);
        for (_, model) in detectors.models() {
            assert_eq!(model.len(), 30);
            assert_eq!(model.k(), 20);
        }
    }

    #[test]
    fn detectors_are_independent_across_metrics() {
        let profiles: Vec<_> = (0..10).map(|i| profile(i as f64 / 10.0, i as f64 / 10.0)).collect();
        let detectors = fit_metric_detectors(&profiles, MetricMask::all(), 5).unwrap();
        let base = profile(0.35, 0.35);
        let mut inv_shifted = base.clone();
        inv_shifted.inv = vec![0.9; 16];
        let a = detectors.score_profile(&base).unwrap();
        let b = detectors.score_profile(&inv_shifted).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1], b[1]);
        assert_eq!(a[2], b[2]);
        assert_eq!(a[3], b[3]);
        assert_ne!(a[4], b[4]);
    }

    #[test]
    fn subset_mask_fits_only_requested_metrics() {
        let profiles: Vec<_> = (0..10).map(|i| profile(i as f64 / 10.0, 0.5)).collect();
        let mask = MetricMask::parse("r,w").unwrap();
        let detectors = fit_metric_detectors(&profiles, mask, 5).unwrap();
        assert_eq!(detectors.models().len(), 2);
        assert_eq!(detectors.models()[0].0, MetricKind::Robustness);
        assert_eq!(detectors.models()[1].0, MetricKind::Weakness);
        let scores = detectors.score_profile(&profile(0.3, 0.5)).unwrap();
        assert_eq!(scores.len(), 2);
    }

    #[test]
    fn meta_detector_matches_input_dimension() {
        let scores: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![0.4 + (i % 5) as f64 * 0.01, 0.45, 0.5])
            .collect();
        let meta = fit_meta_detector(&scores, 20).unwrap();
        assert_eq!(meta.dim(), 3);
        assert_eq!(meta.len(), 30);
        assert_eq!(meta.k(), 20);
    }

    #[test]
    fn training_vectors_are_mostly_inliers_to_their_meta_model() {
        let scores: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64 / 30.0;
                vec![0.4 + 0.05 * (t * 7.0).sin(), 0.45 + 0.05 * (t * 13.0).cos()]
            })
            .collect();
        let meta = fit_meta_detector(&scores, 20).unwrap();
        let mut confs: Vec<f64> = scores.iter().map(|s| meta.score(s).unwrap()).collect();
        confs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = confs[confs.len() / 2];
        assert!(median > 0.0, "median meta confidence {median}");
    }

    #[test]
    fn mask_parsing() {
        assert_eq!(MetricMask::parse("r,w,s,is,inv").unwrap(), MetricMask::all());
        let m = MetricMask::parse("inv").unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.contains(MetricKind::NoiseInvariance));
        assert!(MetricMask::parse("bogus").is_err());
        assert_eq!(MetricMask::parse("r, w").unwrap().names(), "r,w");
    }
}
