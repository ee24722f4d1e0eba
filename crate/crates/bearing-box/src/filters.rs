//! Pseudo-linear Kalman estimators.
//!
//! Four estimators share the same skeleton: a linear state transition, a
//! measurement matrix built from the measurements themselves (which is what
//! makes them *pseudo*-linear), and a standard Kalman correction whose
//! innovation covariance is inverted with a pseudo-inverse so that rank-
//! deficient measurement rows are handled without special cases.
//!
//! * `predict_common` / `update_common`: 7-state `[p, v, alpha]` estimator
//!   driven by the world-frame pseudo-measurement of a 3D-box detection.
//! * `predict_mav` / `update_mav`: 10-state `[p, v, a, alpha]` estimator that
//!   additionally consumes the thrust direction of a multicopter target.
//! * `update_bearing_only` / `update_bearing_angle`: the two classic
//!   baselines used for comparison.

use crate::box3d::WorldPseudoMeasurement;
use crate::geometry::E3;
use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use std::fmt;

pub type Vector6 = SVector<f64, 6>;
pub type Vector7 = SVector<f64, 7>;
pub type Vector10 = SVector<f64, 10>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix7 = SMatrix<f64, 7, 7>;
pub type Matrix10 = SMatrix<f64, 10, 10>;

/// Floor applied to the size estimate when it scales the measurement noise.
pub const ALPHA_FLOOR: f64 = 1e-3;
/// Floor applied to `|a - g e3|` when it scales the attitude-row noise.
pub const ACCEL_FLOOR: f64 = 1e-2;
/// Floor applied to the estimated range in the baseline noise models.
pub const RANGE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub enum FilterError {
    /// The MAV update needs a thrust-direction measurement.
    MissingAttitude,
    /// A direction vector had (numerically) zero length.
    ZeroVector,
    /// The angular-size measurement must be positive.
    NonPositiveAngle { angle: f64 },
}

impl fmt::Display for FilterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FilterError::MissingAttitude => write!(f, "measurement carries no thrust direction"),
            FilterError::ZeroVector => write!(f, "direction vector has zero norm"),
            FilterError::NonPositiveAngle { angle } => {
                write!(f, "angular size must be positive, got {angle}")
            }
        }
    }
}

impl std::error::Error for FilterError {}

/// Measurement and process noise levels plus gravity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    /// Std of the additive noise on the world-frame pseudo-measurement.
    pub sigma_tbar: f64,
    /// Std of the additive noise on the thrust direction.
    pub sigma_h: f64,
    /// Process noise std on position (7-state model only).
    pub sigma_p: f64,
    /// Process noise std on velocity.
    pub sigma_v: f64,
    /// Process noise std on acceleration (10-state model only).
    pub sigma_a: f64,
    /// Process noise std on the size state.
    pub sigma_alpha: f64,
    /// Std of the bearing noise used by the two baselines.
    pub sigma_bearing: f64,
    /// Std of the angular-size noise used by the bearing-angle baseline.
    pub sigma_angle: f64,
    /// Gravity magnitude, along `+e3`.
    pub g: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            sigma_tbar: 0.2,
            sigma_h: 0.02,
            sigma_p: 0.0,
            sigma_v: 0.001,
            sigma_a: 0.0005_f64.sqrt(),
            sigma_alpha: 0.0001,
            sigma_bearing: 0.01,
            sigma_angle: 0.01,
            g: 9.81,
        }
    }
}

/// Initial state and covariance, shared by all estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterInit {
    pub p0: Vector3<f64>,
    pub v0: Vector3<f64>,
    pub a0: Vector3<f64>,
    pub alpha0: f64,
    /// Initial covariance is `cov0 * I`.
    pub cov0: f64,
}

impl Default for FilterInit {
    fn default() -> Self {
        FilterInit {
            p0: Vector3::new(1.0, 2.0, 0.0),
            v0: Vector3::zeros(),
            a0: Vector3::zeros(),
            alpha0: 1.0,
            cov0: 10.0,
        }
    }
}

/// One frame's input to the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementFrame {
    pub t_bar: WorldPseudoMeasurement,
    /// Thrust direction; present only for MAV targets.
    pub h: Option<Vector3<f64>>,
    /// Camera position in the world frame.
    pub p_c_w: Vector3<f64>,
}

impl MeasurementFrame {
    pub fn timestamp(&self) -> f64 {
        self.t_bar.timestamp
    }
}

/// 7-dim state `[p, v, alpha]` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommonState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub alpha: f64,
    pub cov: Matrix7,
}

impl CommonState {
    pub fn init(init: &FilterInit) -> Self {
        CommonState {
            p: init.p0,
            v: init.v0,
            alpha: init.alpha0,
            cov: Matrix7::identity() * init.cov0,
        }
    }

    pub fn as_vector(&self) -> Vector7 {
        let mut x = Vector7::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x[6] = self.alpha;
        x
    }

    fn from_vector(x: &Vector7, cov: Matrix7) -> Self {
        CommonState {
            p: x.fixed_rows::<3>(0).into(),
            v: x.fixed_rows::<3>(3).into(),
            alpha: x[6],
            cov,
        }
    }
}

/// 10-dim state `[p, v, a, alpha]` with covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MavState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub alpha: f64,
    pub cov: Matrix10,
}

impl MavState {
    pub fn init(init: &FilterInit) -> Self {
        MavState {
            p: init.p0,
            v: init.v0,
            a: init.a0,
            alpha: init.alpha0,
            cov: Matrix10::identity() * init.cov0,
        }
    }

    pub fn as_vector(&self) -> Vector10 {
        let mut x = Vector10::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x.fixed_rows_mut::<3>(6).copy_from(&self.a);
        x[9] = self.alpha;
        x
    }

    fn from_vector(x: &Vector10, cov: Matrix10) -> Self {
        MavState {
            p: x.fixed_rows::<3>(0).into(),
            v: x.fixed_rows::<3>(3).into(),
            a: x.fixed_rows::<3>(6).into(),
            alpha: x[9],
            cov,
        }
    }
}

/// 6-dim state `[p, v]` of the bearing-only baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BearingOnlyState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub cov: Matrix6,
}

impl BearingOnlyState {
    pub fn init(init: &FilterInit) -> Self {
        BearingOnlyState {
            p: init.p0,
            v: init.v0,
            cov: Matrix6::identity() * init.cov0,
        }
    }

    pub fn as_vector(&self) -> Vector6 {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x
    }
}

fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

/// Constant-velocity transition matrix for the 7-state model.
pub fn transition_common(dt: f64) -> Matrix7 {
    let mut a = Matrix7::identity();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    a
}

/// Constant-acceleration transition matrix for the 10-state model.
pub fn transition_mav(dt: f64) -> Matrix10 {
    let mut a = Matrix10::identity();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    a.fixed_view_mut::<3, 3>(0, 6)
        .copy_from(&(Matrix3::identity() * (0.5 * dt * dt)));
    a.fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&(Matrix3::identity() * dt));
    a
}

fn process_noise_common(n: &NoiseParams) -> Matrix7 {
    let mut w = Matrix7::zeros();
    for i in 0..3 {
        w[(i, i)] = n.sigma_p * n.sigma_p;
        w[(i + 3, i + 3)] = n.sigma_v * n.sigma_v;
    }
    w[(6, 6)] = n.sigma_alpha * n.sigma_alpha;
    w
}

fn process_noise_mav(n: &NoiseParams) -> Matrix10 {
    // Position rows carry no process noise in the 10-state model.
    let mut w = Matrix10::zeros();
    for i in 0..3 {
        w[(i + 3, i + 3)] = n.sigma_v * n.sigma_v;
        w[(i + 6, i + 6)] = n.sigma_a * n.sigma_a;
    }
    w[(9, 9)] = n.sigma_alpha * n.sigma_alpha;
    w
}

/// Pseudo-inverse of a small square matrix, with a rank cutoff relative to
/// the largest singular value.
fn pseudo_inverse<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    let svd = DMatrix::from_iterator(N, N, m.iter().copied()).svd(true, true);
    let sigma_max = svd.singular_values.max();
    let eps = f64::EPSILON * (N as f64) * sigma_max;
    let pinv = svd.pseudo_inverse(eps).expect("eps is non-negative");
    SMatrix::from_iterator(pinv.iter().copied())
}

/// One Kalman correction; returns the updated state vector and covariance.
/// The covariance is symmetrized after the update.
macro_rules! kalman_correct {
    ($x:expr, $p:expr, $h:expr, $z:expr, $r:expr) => {{
        let s = $h * $p * $h.transpose() + $r;
        let gain = $p * $h.transpose() * pseudo_inverse(&s);
        let innovation = $z - $h * $x;
        let x_new = $x + gain * innovation;
        let p_new = symmetrize(&((SMatrix::identity() - gain * $h) * $p));
        (x_new, p_new)
    }};
}

/// Propagates the 7-state estimate over `dt` seconds.
pub fn predict_common(s: &CommonState, dt: f64, n: &NoiseParams) -> CommonState {
    assert!(dt > 0.0, "time step must be positive");
    let a = transition_common(dt);
    let x = a * s.as_vector();
    let cov = symmetrize(&(a * s.cov * a.transpose() + process_noise_common(n)));
    CommonState::from_vector(&x, cov)
}

/// Corrects the 7-state estimate with one pseudo-measurement.
///
/// The measurement noise is `alpha^2 sigma_tbar^2 I` with the current size
/// estimate substituted for the unknown `alpha` (floored so a transiently
/// tiny estimate cannot make the filter trust measurements infinitely).
pub fn update_common(s: &CommonState, m: &MeasurementFrame, n: &NoiseParams) -> CommonState {
    let mut h = SMatrix::<f64, 3, 7>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 1>(0, 6)
        .copy_from(&(-m.t_bar.t_bar_oc_w));
    let z = m.p_c_w;

    let alpha_eff = s.alpha.max(ALPHA_FLOOR);
    let r = Matrix3::identity() * (alpha_eff * alpha_eff * n.sigma_tbar * n.sigma_tbar);

    let (x, cov) = kalman_correct!(s.as_vector(), s.cov, h, z, r);
    CommonState::from_vector(&x, cov)
}

/// Propagates the 10-state estimate over `dt` seconds.
pub fn predict_mav(s: &MavState, dt: f64, n: &NoiseParams) -> MavState {
    assert!(dt > 0.0, "time step must be positive");
    let a = transition_mav(dt);
    let x = a * s.as_vector();
    let cov = symmetrize(&(a * s.cov * a.transpose() + process_noise_mav(n)));
    MavState::from_vector(&x, cov)
}

/// Corrects the 10-state estimate with a pseudo-measurement plus the thrust
/// direction of the target.
///
/// The attitude rows constrain the acceleration component orthogonal to the
/// thrust: `P_h a = P_h g e3`. Their noise scale `|a - g e3|` and the size
/// `alpha` inside the pseudo-measurement noise are replaced by the current
/// estimates (floored). The joint innovation covariance is singular by
/// construction (the projector block has rank 2), hence the pseudo-inverse.
pub fn update_mav(s: &MavState, m: &MeasurementFrame, n: &NoiseParams) -> Result<MavState, FilterError> {
    let h_dir = m.h.ok_or(FilterError::MissingAttitude)?;
    let p_h = projector(&h_dir)?;

    let mut h = SMatrix::<f64, 6, 10>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 1>(0, 9)
        .copy_from(&(-m.t_bar.t_bar_oc_w));
    h.fixed_view_mut::<3, 3>(3, 6).copy_from(&p_h);

    let mut z = Vector6::zeros();
    z.fixed_rows_mut::<3>(0).copy_from(&m.p_c_w);
    z.fixed_rows_mut::<3>(3).copy_from(&(p_h * (n.g * E3)));

    let alpha_eff = s.alpha.max(ALPHA_FLOOR);
    let accel_scale = (s.a - n.g * E3).norm().max(ACCEL_FLOOR);
    let mut v = Matrix6::zeros();
    v.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * alpha_eff));
    v.fixed_view_mut::<3, 3>(3, 3).copy_from(&(p_h * accel_scale));
    let mut sigma_a = Matrix6::zeros();
    sigma_a
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(Matrix3::identity() * (n.sigma_tbar * n.sigma_tbar)));
    sigma_a
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * (n.sigma_h * n.sigma_h)));
    let r = v * sigma_a * v.transpose();

    let (x, cov) = kalman_correct!(s.as_vector(), s.cov, h, z, r);
    Ok(MavState::from_vector(&x, cov))
}

/// Orthogonal projector onto the complement of a direction: `I - h h^T`.
///
/// The input is renormalized first so the result is an exact projector even
/// for slightly off-unit inputs.
pub fn projector(h: &Vector3<f64>) -> Result<Matrix3<f64>, FilterError> {
    let norm = h.norm();
    if norm < 1e-9 {
        return Err(FilterError::ZeroVector);
    }
    let u = h / norm;
    Ok(Matrix3::identity() - u * u.transpose())
}

/// Bearing-only baseline correction on the 6-dim `[p, v]` state.
///
/// Pseudo-linear form: `P_g p_o = P_g p_c` with `P_g` the projector onto the
/// complement of the measured bearing. The noise scale grows with the
/// estimated range, which is what drives the estimate toward the camera when
/// the observer never maneuvers.
pub fn update_bearing_only(
    s: &BearingOnlyState,
    bearing: &Vector3<f64>,
    p_c_w: &Vector3<f64>,
    n: &NoiseParams,
) -> Result<BearingOnlyState, FilterError> {
    let p_g = projector(bearing)?;
    let mut h = SMatrix::<f64, 3, 6>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&p_g);
    let z = p_g * p_c_w;

    let range = (s.p - p_c_w).norm().max(RANGE_FLOOR);
    let r = p_g * (range * range * n.sigma_bearing * n.sigma_bearing);

    let (x, cov) = kalman_correct!(s.as_vector(), s.cov, h, z, r);
    Ok(BearingOnlyState {
        p: x.fixed_rows::<3>(0).into(),
        v: x.fixed_rows::<3>(3).into(),
        cov,
    })
}

/// Propagates the bearing-only baseline (constant-velocity model).
pub fn predict_bearing_only(s: &BearingOnlyState, dt: f64, n: &NoiseParams) -> BearingOnlyState {
    assert!(dt > 0.0, "time step must be positive");
    let mut a = Matrix6::identity();
    a.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(Matrix3::identity() * dt));
    let mut w = Matrix6::zeros();
    for i in 0..3 {
        w[(i, i)] = n.sigma_p * n.sigma_p;
        w[(i + 3, i + 3)] = n.sigma_v * n.sigma_v;
    }
    let x = a * s.as_vector();
    let cov = symmetrize(&(a * s.cov * a.transpose() + w));
    BearingOnlyState {
        p: x.fixed_rows::<3>(0).into(),
        v: x.fixed_rows::<3>(3).into(),
        cov,
    }
}

/// Bearing-angle baseline correction on the 7-dim `[p, v, l]` state.
///
/// Measurement model `p_c = p_o - (g/theta) l`, valid for a target whose
/// apparent size is viewpoint-invariant. The noise enters through both the
/// bearing and the angle; to first order the error scales with `l / theta`
/// (the implied range), so the measurement covariance is
/// `(l/theta)^2 (sigma_bearing^2 + sigma_angle^2) I`.
pub fn update_bearing_angle(
    s: &CommonState,
    bearing: &Vector3<f64>,
    angle: f64,
    p_c_w: &Vector3<f64>,
    n: &NoiseParams,
) -> Result<CommonState, FilterError> {
    if !(angle > 0.0) {
        return Err(FilterError::NonPositiveAngle { angle });
    }
    let norm = bearing.norm();
    if norm < 1e-9 {
        return Err(FilterError::ZeroVector);
    }
    let g_dir = bearing / norm;

    let mut h = SMatrix::<f64, 3, 7>::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
    h.fixed_view_mut::<3, 1>(0, 6).copy_from(&(-g_dir / angle));
    let z = *p_c_w;

    let implied_range = s.alpha.max(RANGE_FLOOR) / angle;
    let var = implied_range
        * implied_range
        * (n.sigma_bearing * n.sigma_bearing + n.sigma_angle * n.sigma_angle);
    let r = Matrix3::identity() * var;

    let (x, cov) = kalman_correct!(s.as_vector(), s.cov, h, z, r);
    Ok(CommonState::from_vector(&x, cov))
}
