//! Numeric observability analysis of the pseudo-linear estimators.
//!
//! Observability is decided by the column rank of a stacked observation
//! matrix built from noise-free pseudo-measurements: if the stack has full
//! column rank, one state explains the whole observation history. Three
//! stacks are provided — first-order (constant-velocity target), second-order
//! with attitude rows (constant-acceleration MAV target), and a generic
//! polynomial stack of order `n` whose attitude rows use second differences —
//! together with an analytic predicate checker that cross-validates the rank
//! verdicts against the conditions they are supposed to encode.

use crate::filters::projector;
use crate::geometry::E3;
use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};
use serde::Serialize;
use std::fmt;

/// Jerk / relative-acceleration thresholds for the analytic predicates.
pub const PREDICATE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum ObservabilityError {
    InsufficientObservations { needed: usize, got: usize },
    MissingThrustDirection { index: usize },
}

impl fmt::Display for ObservabilityError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservabilityError::InsufficientObservations { needed, got } => {
                write!(f, "need at least {needed} observations, got {got}")
            }
            ObservabilityError::MissingThrustDirection { index } => {
                write!(f, "observation {index} carries no thrust direction")
            }
        }
    }
}

impl std::error::Error for ObservabilityError {}

/// One noise-free observation: time, world-frame pseudo-measurement, camera
/// position, and (for MAV targets) the thrust direction at that time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackObservation {
    pub t: f64,
    pub t_bar: Vector3<f64>,
    pub p_c: Vector3<f64>,
    pub h: Option<Vector3<f64>>,
}

/// Row-block provenance inside an [`ObservationStack`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RowKind {
    Position,
    Attitude,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowBlock {
    pub kind: RowKind,
    pub t: f64,
}

/// A stacked observation system `M x = b` with per-block provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub rows: Vec<RowBlock>,
}

impl ObservationStack {
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Numeric rank with the standard SVD rule
    /// `sigma > max(rows, cols) * eps * sigma_max`, plus the extreme
    /// singular values it was decided from.
    pub fn numeric_rank(&self) -> (usize, f64, f64) {
        numeric_rank(&self.matrix)
    }

    pub fn verdict(&self) -> ObservabilityVerdict {
        let (rank, sigma_min, sigma_max) = self.numeric_rank();
        ObservabilityVerdict {
            observable: rank == self.cols(),
            numeric_rank: rank,
            cols: self.cols(),
            sigma_min,
            sigma_max,
            condition_triggered: TriggeredCondition::None,
            cond_a: false,
            cond_b: false,
            disagreement: false,
        }
    }
}

/// Numeric rank of a dense matrix by SVD.
pub fn numeric_rank(m: &DMatrix<f64>) -> (usize, f64, f64) {
    let sv = m.clone().svd(false, false).singular_values;
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    let tol = (m.nrows().max(m.ncols()) as f64) * f64::EPSILON * sigma_max;
    let rank = sv.iter().filter(|&&s| s > tol).count();
    (rank, sigma_min, sigma_max)
}

/// Which analytic observability condition fired, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggeredCondition {
    HigherOrderMotion,
    ThrustOrthogonalAccel,
    None,
}

/// Outcome of a rank test, optionally annotated with the analytic predicates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObservabilityVerdict {
    pub observable: bool,
    pub numeric_rank: usize,
    pub cols: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub condition_triggered: TriggeredCondition,
    /// Higher-order observer motion (jerk for MAV targets, acceleration for
    /// constant-velocity targets) detected on at least one step.
    pub cond_a: bool,
    /// Relative acceleration with a component orthogonal to the thrust
    /// detected on at least one step. Always false without attitude data.
    pub cond_b: bool,
    /// Set when the analytic prediction and the numeric rank disagree.
    pub disagreement: bool,
}

/// Builds the `(3N+3) x 10` stack for a constant-acceleration MAV target:
/// rows `[I, dt I, dt^2/2 I, -t_bar]` per observation plus one attitude
/// block `[O, O, P_h, O]` with right-hand side `P_h g e3`.
///
/// Times are shifted so the first observation is at zero.
pub fn build_second_order_stack(
    obs: &[StackObservation],
    h: &Vector3<f64>,
    g: f64,
) -> ObservationStack {
    assert!(!obs.is_empty(), "need at least one observation");
    let n = obs.len();
    let t0 = obs[0].t;
    let mut m = DMatrix::zeros(3 * n + 3, 10);
    let mut b = DVector::zeros(3 * n + 3);
    let mut rows = Vec::with_capacity(n + 1);
    for (k, o) in obs.iter().enumerate() {
        let dt = o.t - t0;
        let r = 3 * k;
        set_block(&mut m, r, 0, &Matrix3::identity());
        set_block(&mut m, r, 3, &(Matrix3::identity() * dt));
        set_block(&mut m, r, 6, &(Matrix3::identity() * (0.5 * dt * dt)));
        set_col(&mut m, r, 9, &(-o.t_bar));
        b.rows_mut(r, 3).copy_from(&o.p_c);
        rows.push(RowBlock {
            kind: RowKind::Position,
            t: o.t,
        });
    }
    let p_h = projector(h).expect("thrust direction must be nonzero");
    let r = 3 * n;
    set_block(&mut m, r, 6, &p_h);
    b.rows_mut(r, 3).copy_from(&(p_h * (g * E3)));
    rows.push(RowBlock {
        kind: RowKind::Attitude,
        t: obs[n - 1].t,
    });
    ObservationStack { matrix: m, rhs: b, rows }
}

/// Builds the `3N x 7` stack for a constant-velocity target:
/// rows `[I, dt I, -t_bar]`.
pub fn build_first_order_stack(obs: &[StackObservation]) -> ObservationStack {
    assert!(!obs.is_empty(), "need at least one observation");
    let n = obs.len();
    let t0 = obs[0].t;
    let mut m = DMatrix::zeros(3 * n, 7);
    let mut b = DVector::zeros(3 * n);
    let mut rows = Vec::with_capacity(n);
    for (k, o) in obs.iter().enumerate() {
        let dt = o.t - t0;
        let r = 3 * k;
        set_block(&mut m, r, 0, &Matrix3::identity());
        set_block(&mut m, r, 3, &(Matrix3::identity() * dt));
        set_col(&mut m, r, 6, &(-o.t_bar));
        b.rows_mut(r, 3).copy_from(&o.p_c);
        rows.push(RowBlock {
            kind: RowKind::Position,
            t: o.t,
        });
    }
    ObservationStack { matrix: m, rhs: b, rows }
}

/// Builds the polynomial-order-`n` stack, `(3n+4)` columns for the relative
/// trajectory coefficients `s_0 .. s_n` and the scale.
///
/// Top block: `[I, t_k I, .., t_k^n I, -t_bar(t_k)]` per observation. With
/// `attitude_rows`, each observation from the third on adds
/// `[O, O, D2(t_k^2) P_h, .., D2(t_k^n) P_h, O]` where `D2` is the second
/// finite difference over the (uniform) sampling interval, with right-hand
/// side `P_h (g e3 - D2(p_c(t_k)))`. Times are shifted so `t_1 = 0`.
pub fn build_polynomial_stack(
    obs: &[StackObservation],
    n: usize,
    attitude_rows: bool,
    g: f64,
) -> Result<ObservationStack, ObservabilityError> {
    if obs.len() < n + 1 {
        return Err(ObservabilityError::InsufficientObservations {
            needed: n + 1,
            got: obs.len(),
        });
    }
    let count = obs.len();
    let t0 = obs[0].t;
    let ts: Vec<f64> = obs.iter().map(|o| o.t - t0).collect();
    let tau = if count > 1 { ts[1] - ts[0] } else { 1.0 };
    if attitude_rows {
        assert!(
            ts.windows(2)
                .all(|w| ((w[1] - w[0]) - tau).abs() <= 1e-9 * tau.max(1.0)),
            "attitude rows require uniform sampling"
        );
    }

    let cols = 3 * (n + 1) + 1;
    let att_count = if attitude_rows { count.saturating_sub(2) } else { 0 };
    let mut m = DMatrix::zeros(3 * count + 3 * att_count, cols);
    let mut b = DVector::zeros(3 * count + 3 * att_count);
    let mut rows = Vec::new();

    for (k, o) in obs.iter().enumerate() {
        let r = 3 * k;
        let mut power = 1.0;
        for j in 0..=n {
            set_block(&mut m, r, 3 * j, &(Matrix3::identity() * power));
            power *= ts[k];
        }
        set_col(&mut m, r, cols - 1, &(-o.t_bar));
        b.rows_mut(r, 3).copy_from(&o.p_c);
        rows.push(RowBlock {
            kind: RowKind::Position,
            t: o.t,
        });
    }

    if attitude_rows {
        // Second differences of t^j and of the camera positions.
        for (idx, k) in (2..count).enumerate() {
            let o = &obs[k];
            let h = o.h.ok_or(ObservabilityError::MissingThrustDirection { index: k })?;
            let p_h = projector(&h).expect("thrust direction must be nonzero");
            let r = 3 * count + 3 * idx;
            for j in 2..=n {
                let coeff = second_difference(|i| ts[i].powi(j as i32), k, tau);
                set_block(&mut m, r, 3 * j, &(p_h * coeff));
            }
            let d2_pc = second_difference_vec(|i| obs[i].p_c, k, tau);
            b.rows_mut(r, 3).copy_from(&(p_h * (g * E3 - d2_pc)));
            rows.push(RowBlock {
                kind: RowKind::Attitude,
                t: o.t,
            });
        }
    }

    Ok(ObservationStack { matrix: m, rhs: b, rows })
}

fn second_difference(f: impl Fn(usize) -> f64, k: usize, tau: f64) -> f64 {
    let d1 = |i: usize| (f(i) - f(i - 1)) / tau;
    (d1(k) - d1(k - 1)) / tau
}

fn second_difference_vec(f: impl Fn(usize) -> Vector3<f64>, k: usize, tau: f64) -> Vector3<f64> {
    let d1 = |i: usize| (f(i) - f(i - 1)) / tau;
    (d1(k) - d1(k - 1)) / tau
}

/// Second differences of the pseudo-measurements: the scaled relative
/// acceleration `(a_c - a_o) / alpha` at each interior observation. Exposed
/// for diagnostics; the rank test itself never materializes these.
pub fn relative_accel_columns(obs: &[StackObservation]) -> Vec<Vector3<f64>> {
    if obs.len() < 3 {
        return Vec::new();
    }
    let tau = obs[1].t - obs[0].t;
    (2..obs.len())
        .map(|k| -second_difference_vec(|i| obs[i].t_bar, k, tau))
        .collect()
}

/// Ground-truth sample for predicate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub p_o: Vector3<f64>,
    pub a_o: Vector3<f64>,
    pub p_c: Vector3<f64>,
    pub a_c: Vector3<f64>,
    /// Thrust direction; present only for MAV targets.
    pub h: Option<Vector3<f64>>,
}

/// Evaluates the analytic observability predicates on ground truth and
/// cross-checks them against the numeric rank of the matching stack.
///
/// Predicate (a): the observer has higher-order motion than the target
/// model — nonzero jerk (finite-differenced, threshold `1e-6`) for MAV
/// targets, nonzero acceleration for constant-velocity targets.
/// Predicate (b): `|P_h (a_o - a_c)| > 1e-6` on at least one step; only
/// meaningful with attitude data.
pub fn check_theorem_conditions(samples: &[TruthSample], alpha: f64, g: f64) -> ObservabilityVerdict {
    assert!(samples.len() >= 3, "need at least 3 samples");
    let is_mav = samples.iter().all(|s| s.h.is_some());

    let cond_a = if is_mav {
        samples.windows(2).any(|w| {
            let dt = w[1].t - w[0].t;
            ((w[1].a_c - w[0].a_c) / dt).norm() > PREDICATE_TOL
        })
    } else {
        samples.iter().any(|s| s.a_c.norm() > PREDICATE_TOL)
    };
    let cond_b = is_mav
        && samples.iter().any(|s| {
            let p_h = projector(&s.h.unwrap()).expect("unit thrust direction");
            (p_h * (s.a_o - s.a_c)).norm() > PREDICATE_TOL
        });

    let obs: Vec<StackObservation> = samples
        .iter()
        .map(|s| StackObservation {
            t: s.t,
            t_bar: (s.p_o - s.p_c) / alpha,
            p_c: s.p_c,
            h: s.h,
        })
        .collect();
    let stack = if is_mav {
        build_second_order_stack(&obs, &samples[0].h.unwrap(), g)
    } else {
        build_first_order_stack(&obs)
    };
    let (rank, sigma_min, sigma_max) = stack.numeric_rank();
    let observable = rank == stack.cols();

    let n = samples.len();
    let min_for_a = if is_mav { 4 } else { 3 };
    let predicted = (cond_a && n >= min_for_a) || (cond_b && n >= 3);
    let condition_triggered = if cond_a {
        TriggeredCondition::HigherOrderMotion
    } else if cond_b {
        TriggeredCondition::ThrustOrthogonalAccel
    } else {
        TriggeredCondition::None
    };

    ObservabilityVerdict {
        observable,
        numeric_rank: rank,
        cols: stack.cols(),
        sigma_min,
        sigma_max,
        condition_triggered,
        cond_a,
        cond_b,
        disagreement: observable != predicted,
    }
}

/// The two 6x4 matrices of the projector row-reduction identity:
/// `[[I, u], [P_h, 0]]` and `[[I, u], [0, P_h u]]`. Row operations map one
/// to the other, so their ranks always agree.
pub fn appendix_a_transform(
    h: &Vector3<f64>,
    u: &Vector3<f64>,
) -> (SMatrix<f64, 6, 4>, SMatrix<f64, 6, 4>) {
    let p_h = projector(h).expect("unit direction");
    let mut left = SMatrix::<f64, 6, 4>::zeros();
    left.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    left.fixed_view_mut::<3, 1>(0, 3).copy_from(u);
    left.fixed_view_mut::<3, 3>(3, 0).copy_from(&p_h);

    let mut right = SMatrix::<f64, 6, 4>::zeros();
    right.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    right.fixed_view_mut::<3, 1>(0, 3).copy_from(u);
    right.fixed_view_mut::<3, 1>(3, 3).copy_from(&(p_h * u));

    (left, right)
}

/// Numeric rank of a small fixed-size matrix (SVD rule as [`numeric_rank`]).
pub fn numeric_rank_static<const R: usize, const C: usize>(m: &SMatrix<f64, R, C>) -> usize {
    numeric_rank(&DMatrix::from_iterator(R, C, m.iter().copied())).0
}

fn set_block(m: &mut DMatrix<f64>, r: usize, c: usize, block: &Matrix3<f64>) {
    m.view_mut((r, c), (3, 3)).copy_from(block);
}

fn set_col(m: &mut DMatrix<f64>, r: usize, c: usize, col: &Vector3<f64>) {
    m.view_mut((r, c), (3, 1)).copy_from(col);
}
