//! Evaluation metrics: mean relative depth error (NIDE), normalized
//! estimation error squared (NEES), and per-axis RMSE.

use crate::simulator::Estimator;
use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptyTrace,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyTrace => write!(f, "trace has no scoreable frames"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Per-frame record of an estimator run. Truth-dependent fields are `None`
/// when the run had no ground truth (offline replay).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    /// Acceleration estimate; only the 10-state estimator has one.
    pub a: Option<Vector3<f64>>,
    /// Size estimate; the bearing-only baseline has none.
    pub alpha: Option<f64>,
    pub truth_p: Option<Vector3<f64>>,
    /// True optical-axis depth of the target center.
    pub depth_true: Option<f64>,
    /// Estimated optical-axis depth of the target center.
    pub depth_est: f64,
    pub nees: Option<f64>,
    /// Whether this frame carried a measurement (false for predict-only).
    pub in_fov: bool,
}

/// One estimator's run over one scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTrace {
    pub estimator: Estimator,
    pub scenario: String,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
}

/// Mean relative depth error over the scoreable frames.
///
/// By default only frames with a measurement (`in_fov`) and positive true
/// depth are scored; pass `include_out_of_fov` to score every frame with
/// truth instead.
pub fn nide_with_options(trace: &EstimateTrace, include_out_of_fov: bool) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in &trace.records {
        let Some(depth_true) = r.depth_true else {
            continue;
        };
        if depth_true <= 0.0 || (!r.in_fov && !include_out_of_fov) {
            continue;
        }
        sum += (r.depth_est - depth_true).abs() / depth_true;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(sum / count as f64)
}

/// Mean relative depth error over in-view frames.
pub fn nide(trace: &EstimateTrace) -> Result<f64, MetricsError> {
    nide_with_options(trace, false)
}

/// NEES value plus a flag recording whether the covariance had to be
/// pseudo-inverted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeesResult {
    pub value: f64,
    pub pseudo_inverse_used: bool,
}

/// Normalized estimation error squared:
/// `(x - xhat)^T P^-1 (x - xhat) / n_x`.
///
/// A consistent filter's long-run average is 1. Falls back to the
/// pseudo-inverse (and flags it) when the covariance is singular.
pub fn nees(truth: &DVector<f64>, est: &DVector<f64>, cov: &DMatrix<f64>) -> NeesResult {
    assert_eq!(truth.len(), est.len());
    assert_eq!(cov.nrows(), truth.len());
    let err = truth - est;
    let n_x = truth.len() as f64;
    match cov.clone().cholesky() {
        Some(chol) => NeesResult {
            value: err.dot(&chol.solve(&err)) / n_x,
            pseudo_inverse_used: false,
        },
        None => {
            let svd = cov.clone().svd(true, true);
            let sigma_max = svd.singular_values.max();
            let eps = f64::EPSILON * (cov.nrows() as f64) * sigma_max;
            let pinv = svd.pseudo_inverse(eps).expect("eps is non-negative");
            NeesResult {
                value: (err.dot(&(&pinv * &err)) / n_x).max(0.0),
                pseudo_inverse_used: true,
            }
        }
    }
}

/// Root-mean-square position error per world axis, over frames with truth.
pub fn axis_errors(trace: &EstimateTrace) -> Result<[f64; 3], MetricsError> {
    let mut sq = [0.0_f64; 3];
    let mut count = 0usize;
    for r in &trace.records {
        let Some(truth_p) = r.truth_p else { continue };
        let e = r.p - truth_p;
        sq[0] += e.x * e.x;
        sq[1] += e.y * e.y;
        sq[2] += e.z * e.z;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyTrace);
    }
    Ok(sq.map(|s| (s / count as f64).sqrt()))
}

/// Mean NEES over frames that have one.
pub fn mean_nees(trace: &EstimateTrace) -> Option<f64> {
    let values: Vec<f64> = trace.records.iter().filter_map(|r| r.nees).collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// The per-run summary record serialized to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricSummary {
    pub scenario: String,
    pub estimator: String,
    pub nide: Option<f64>,
    pub mean_nees: Option<f64>,
    pub rmse_x: Option<f64>,
    pub rmse_y: Option<f64>,
    pub rmse_z: Option<f64>,
    pub frames: usize,
    pub seed: u64,
}

impl MetricSummary {
    pub fn from_trace(trace: &EstimateTrace) -> Self {
        let rmse = axis_errors(trace).ok();
        MetricSummary {
            scenario: trace.scenario.clone(),
            estimator: trace.estimator.name().to_string(),
            nide: nide(trace).ok(),
            mean_nees: mean_nees(trace),
            rmse_x: rmse.map(|r| r[0]),
            rmse_y: rmse.map(|r| r[1]),
            rmse_z: rmse.map(|r| r[2]),
            frames: trace.records.len(),
            seed: trace.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn trace_with_depths(pairs: &[(f64, f64)]) -> EstimateTrace {
        EstimateTrace {
            estimator: Estimator::BearingBox,
            scenario: "test".into(),
            seed: 0,
            records: pairs
                .iter()
                .enumerate()
                .map(|(i, &(d_true, d_est))| TraceRecord {
                    t: i as f64,
                    p: Vector3::zeros(),
                    v: Vector3::zeros(),
                    a: None,
                    alpha: None,
                    truth_p: Some(Vector3::zeros()),
                    depth_true: Some(d_true),
                    depth_est: d_est,
                    nees: None,
                    in_fov: true,
                })
                .collect(),
        }
    }

    #[test]
    fn nide_basics() {
        let perfect = trace_with_depths(&[(10.0, 10.0), (5.0, 5.0)]);
        assert_eq!(nide(&perfect).unwrap(), 0.0);

        let doubled = trace_with_depths(&[(10.0, 20.0), (5.0, 10.0), (2.0, 4.0)]);
        assert_abs_diff_eq!(nide(&doubled).unwrap(), 1.0, epsilon = 1e-15);

        let hand = trace_with_depths(&[(10.0, 9.0), (10.0, 11.0), (10.0, 10.0)]);
        // (0.1 + 0.1 + 0) / 3
        assert_abs_diff_eq!(nide(&hand).unwrap(), 0.0667, epsilon = 1e-4);
    }

    #[test]
    fn nide_empty_trace_errors() {
        let t = trace_with_depths(&[]);
        assert!(matches!(nide(&t), Err(MetricsError::EmptyTrace)));
    }

    #[test]
    fn nide_equals_weighted_mean_of_partition() {
        let pairs: Vec<(f64, f64)> = (1..=12).map(|i| (i as f64, i as f64 * 1.1)).collect();
        let whole = nide(&trace_with_depths(&pairs)).unwrap();
        let first = nide(&trace_with_depths(&pairs[..6])).unwrap();
        let second = nide(&trace_with_depths(&pairs[6..])).unwrap();
        assert_abs_diff_eq!(whole, (first * 6.0 + second * 6.0) / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn nees_closed_forms() {
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let same = nees(&x, &x, &DMatrix::identity(3, 3));
        assert_eq!(same.value, 0.0);
        assert!(!same.pseudo_inverse_used);

        // P = I, unit error, n_x = 7 => 1/7.
        let truth = DVector::zeros(7);
        let mut est = DVector::zeros(7);
        est[0] = 1.0;
        let r = nees(&truth, &est, &DMatrix::identity(7, 7));
        assert_abs_diff_eq!(r.value, 1.0 / 7.0, epsilon = 1e-12);
    }

    #[test]
    fn nees_singular_covariance_uses_pseudo_inverse() {
        let mut cov = DMatrix::identity(3, 3);
        cov[(2, 2)] = 0.0;
        let truth = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        let est = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let r = nees(&truth, &est, &cov);
        assert!(r.pseudo_inverse_used);
        assert!(r.value >= 0.0);
    }

    #[test]
    fn nees_monte_carlo_chi_square_band() {
        // Linear-Gaussian toy filter: x' = x + w, z = x + v, both scalar
        // Gaussians. The s-step posterior is exact, so mean NEES over many
        // runs must land in the chi-square band.
        use statrs::distribution::{ChiSquared, ContinuousCDF};

        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let nrm = StandardNormal;
        let q = 0.04_f64; // process variance
        let r = 0.25_f64; // measurement variance
        let runs = 400;
        let steps = 30;
        let mut nees_sum = 0.0;
        for _ in 0..runs {
            let mut x_true: f64 = 0.0;
            let mut x_est: f64 = 0.0;
            let mut p: f64 = 1.0;
            for _ in 0..steps {
                let w: f64 = nrm.sample(&mut rng);
                x_true += w * q.sqrt();
                p += q;
                let v: f64 = nrm.sample(&mut rng);
                let z = x_true + v * r.sqrt();
                let k = p / (p + r);
                x_est += k * (z - x_est);
                p *= 1.0 - k;
            }
            let truth = DVector::from_vec(vec![x_true]);
            let est = DVector::from_vec(vec![x_est]);
            let cov = DMatrix::from_vec(1, 1, vec![p]);
            nees_sum += nees(&truth, &est, &cov).value;
        }
        let mean = nees_sum / runs as f64;
        let dof = runs as f64; // n_x = 1 per run
        let chi = ChiSquared::new(dof).unwrap();
        let lo = chi.inverse_cdf(0.025) / dof;
        let hi = chi.inverse_cdf(0.975) / dof;
        assert!(
            mean > lo && mean < hi,
            "mean NEES {mean} outside 95% band [{lo}, {hi}]"
        );
    }

    #[test]
    fn axis_errors_basics() {
        let mut t = trace_with_depths(&[(1.0, 1.0), (1.0, 1.0)]);
        assert_eq!(axis_errors(&t).unwrap(), [0.0, 0.0, 0.0]);

        for r in &mut t.records {
            r.p = Vector3::new(1.0, 0.0, 0.0);
        }
        let rmse = axis_errors(&t).unwrap();
        assert_abs_diff_eq!(rmse[0], 1.0, epsilon = 1e-15);
        assert_eq!(rmse[1], 0.0);
        assert_eq!(rmse[2], 0.0);
    }

    #[test]
    fn axis_errors_match_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let nrm = StandardNormal;
        let mut t = trace_with_depths(&(0..50).map(|i| (i as f64 + 1.0, 0.0)).collect::<Vec<_>>());
        let mut sums = [0.0_f64; 3];
        for r in &mut t.records {
            let e = Vector3::new(nrm.sample(&mut rng), nrm.sample(&mut rng), nrm.sample(&mut rng));
            r.truth_p = Some(Vector3::zeros());
            r.p = e;
            sums[0] += e.x * e.x;
            sums[1] += e.y * e.y;
            sums[2] += e.z * e.z;
        }
        let expected = sums.map(|s| (s / 50.0).sqrt());
        let got = axis_errors(&t).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], expected[i], epsilon = 1e-12);
        }
    }
}
