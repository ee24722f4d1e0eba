//! Deterministic simulation harness: trajectory programs, MAV attitude from
//! acceleration, synthetic (noisy) detections, and the scenario runner.
//!
//! All randomness flows from one ChaCha12 generator keyed by the scenario
//! seed, so a scenario run is a pure function of its `Scenario` value: equal
//! seeds give bit-identical traces. Noise can be injected at two points:
//!
//! * [`NoiseMode::PseudoMeasurement`] adds Gaussian noise directly to the
//!   world-frame pseudo-measurement and the thrust direction — the exact
//!   noise model the filters assume, used by the consistency experiments.
//! * [`NoiseMode::Detection`] perturbs the projected vertices and the
//!   detected rotation, then pushes the corrupted detection through the
//!   normalized-position solver — the full pipeline in realism mode.

use crate::box3d::{
    normalized_rel_pos, thrust_direction, to_world, Box3DDetection, WorldPseudoMeasurement,
};
use crate::filters::{
    predict_bearing_only, predict_common, predict_mav, update_bearing_angle, update_bearing_only,
    update_common, update_mav, BearingOnlyState, CommonState, FilterInit, MavState,
    MeasurementFrame, NoiseParams,
};
use crate::geometry::{
    project_cuboid, unit_plane_to_pixel, CameraIntrinsics, Cuboid, Frame, Pose, Rotation, E3,
};
use crate::metrics::{self, EstimateTrace, TraceRecord};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq)]
pub enum SimulatorError {
    /// Requested attitude for an acceleration equal to free fall.
    FreeFall { accel_minus_gravity: f64 },
    /// A guidance program needs a target trajectory to pursue.
    GuidanceNeedsTarget,
    /// The selected estimator needs a MAV target (thrust measurements).
    EstimatorNeedsMav { estimator: Estimator },
}

impl fmt::Display for SimulatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimulatorError::FreeFall { accel_minus_gravity } => write!(
                f,
                "free-fall acceleration (|a - g e3| = {accel_minus_gravity:.3e}) has no attitude"
            ),
            SimulatorError::GuidanceNeedsTarget => {
                write!(f, "guidance trajectory requires a target to pursue")
            }
            SimulatorError::EstimatorNeedsMav { estimator } => {
                write!(f, "estimator {} requires a MAV target", estimator.name())
            }
        }
    }
}

impl std::error::Error for SimulatorError {}

/// Position, velocity, and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub acceleration: Vector3<f64>,
}

/// A parametric trajectory. Velocity and acceleration are exact derivatives
/// of the position expression, never finite differences.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryProgram {
    Stationary {
        position: Vector3<f64>,
    },
    ConstantVelocity {
        position: Vector3<f64>,
        velocity: Vector3<f64>,
    },
    /// Piecewise-linear path through waypoints at constant speed; holds the
    /// last waypoint once the path is exhausted.
    StraightLines {
        waypoints: Vec<Vector3<f64>>,
        speed: f64,
    },
    /// Horizontal circle (constant altitude).
    Circle {
        center: Vector3<f64>,
        radius: f64,
        speed: f64,
        phase: f64,
    },
    /// Horizontal circle plus constant climb: a helix.
    Spiral {
        center: Vector3<f64>,
        radius: f64,
        speed: f64,
        climb_rate: f64,
        phase: f64,
    },
    /// Constant-speed legs alternating `angle` radians left/right of the
    /// forward direction every `half_period` seconds.
    Zigzag {
        start: Vector3<f64>,
        forward: Vector3<f64>,
        speed: f64,
        half_period: f64,
        angle: f64,
    },
    /// Pure pursuit of the scenario target with a first-order velocity lag:
    /// the commanded speed is `gain * (distance - standoff)` capped at
    /// `speed`, always along the line of sight. Integrated numerically at
    /// build time (RK4, four substeps per frame).
    Guidance {
        start: Vector3<f64>,
        speed: f64,
        lag: f64,
        standoff: f64,
        gain: f64,
    },
    /// `p(t) = sum_i coeffs[i] t^i`.
    Polynomial {
        coeffs: Vec<Vector3<f64>>,
    },
}

impl TrajectoryProgram {
    /// Compiles the program for a scenario of the given length. Guidance
    /// programs integrate against the provided target trajectory; all other
    /// kinds stay closed-form.
    pub fn build(
        &self,
        duration: f64,
        dt: f64,
        target: Option<&Trajectory>,
    ) -> Result<Trajectory, SimulatorError> {
        match self {
            TrajectoryProgram::Guidance {
                start,
                speed,
                lag,
                standoff,
                gain,
            } => {
                let target = target.ok_or(SimulatorError::GuidanceNeedsTarget)?;
                Ok(integrate_guidance(
                    *start, *speed, *lag, *standoff, *gain, target, duration, dt,
                ))
            }
            other => Ok(Trajectory::Closed(other.clone())),
        }
    }
}

/// A compiled trajectory ready for sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Closed(TrajectoryProgram),
    /// Uniform table at `dt_sub`; samples off the grid are interpolated
    /// linearly, samples beyond the table are clamped to the ends.
    Table {
        dt_sub: f64,
        samples: Vec<KinematicSample>,
    },
}

impl Trajectory {
    pub fn sample(&self, t: f64) -> KinematicSample {
        sample_trajectory(self, t)
    }
}

/// Samples a trajectory at time `t`.
pub fn sample_trajectory(traj: &Trajectory, t: f64) -> KinematicSample {
    match traj {
        Trajectory::Closed(p) => sample_closed(p, t),
        Trajectory::Table { dt_sub, samples } => {
            let x = t / dt_sub;
            let i = x.round();
            if (x - i).abs() < 1e-6 {
                let idx = (i as usize).min(samples.len() - 1);
                samples[idx]
            } else {
                let lo = (x.floor() as usize).min(samples.len() - 1);
                let hi = (lo + 1).min(samples.len() - 1);
                let frac = x - x.floor();
                let (a, b) = (&samples[lo], &samples[hi]);
                KinematicSample {
                    position: a.position * (1.0 - frac) + b.position * frac,
                    velocity: a.velocity * (1.0 - frac) + b.velocity * frac,
                    acceleration: a.acceleration * (1.0 - frac) + b.acceleration * frac,
                }
            }
        }
    }
}

fn sample_closed(p: &TrajectoryProgram, t: f64) -> KinematicSample {
    match p {
        TrajectoryProgram::Stationary { position } => KinematicSample {
            position: *position,
            velocity: Vector3::zeros(),
            acceleration: Vector3::zeros(),
        },
        TrajectoryProgram::ConstantVelocity { position, velocity } => KinematicSample {
            position: position + velocity * t,
            velocity: *velocity,
            acceleration: Vector3::zeros(),
        },
        TrajectoryProgram::StraightLines { waypoints, speed } => {
            sample_straight_lines(waypoints, *speed, t)
        }
        TrajectoryProgram::Circle {
            center,
            radius,
            speed,
            phase,
        } => sample_helix(center, *radius, *speed, 0.0, *phase, t),
        TrajectoryProgram::Spiral {
            center,
            radius,
            speed,
            climb_rate,
            phase,
        } => sample_helix(center, *radius, *speed, *climb_rate, *phase, t),
        TrajectoryProgram::Zigzag {
            start,
            forward,
            speed,
            half_period,
            angle,
        } => sample_zigzag(start, forward, *speed, *half_period, *angle, t),
        TrajectoryProgram::Guidance { .. } => {
            panic!("guidance program must be compiled with a target before sampling")
        }
        TrajectoryProgram::Polynomial { coeffs } => {
            let mut position = Vector3::zeros();
            let mut velocity = Vector3::zeros();
            let mut acceleration = Vector3::zeros();
            for (i, c) in coeffs.iter().enumerate() {
                let fi = i as f64;
                position += c * t.powi(i as i32);
                if i >= 1 {
                    velocity += c * (fi * t.powi(i as i32 - 1));
                }
                if i >= 2 {
                    acceleration += c * (fi * (fi - 1.0) * t.powi(i as i32 - 2));
                }
            }
            KinematicSample {
                position,
                velocity,
                acceleration,
            }
        }
    }
}

fn sample_helix(
    center: &Vector3<f64>,
    radius: f64,
    speed: f64,
    climb_rate: f64,
    phase: f64,
    t: f64,
) -> KinematicSample {
    assert!(radius > 0.0, "radius must be positive");
    let omega = speed / radius;
    let theta = phase + omega * t;
    let (s, c) = theta.sin_cos();
    KinematicSample {
        position: center + Vector3::new(radius * c, radius * s, climb_rate * t),
        velocity: Vector3::new(-radius * omega * s, radius * omega * c, climb_rate),
        acceleration: Vector3::new(
            -radius * omega * omega * c,
            -radius * omega * omega * s,
            0.0,
        ),
    }
}

fn sample_straight_lines(waypoints: &[Vector3<f64>], speed: f64, t: f64) -> KinematicSample {
    assert!(waypoints.len() >= 2, "need at least two waypoints");
    assert!(speed >= 0.0);
    let mut remaining = speed * t.max(0.0);
    for w in waypoints.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if remaining <= len {
            let dir = seg / len;
            return KinematicSample {
                position: w[0] + dir * remaining,
                velocity: dir * speed,
                acceleration: Vector3::zeros(),
            };
        }
        remaining -= len;
    }
    KinematicSample {
        position: *waypoints.last().unwrap(),
        velocity: Vector3::zeros(),
        acceleration: Vector3::zeros(),
    }
}

fn sample_zigzag(
    start: &Vector3<f64>,
    forward: &Vector3<f64>,
    speed: f64,
    half_period: f64,
    angle: f64,
    t: f64,
) -> KinematicSample {
    assert!(half_period > 0.0);
    let f_dir = forward.normalize();
    let lateral = E3.cross(&f_dir);
    assert!(
        lateral.norm() > 1e-9,
        "zigzag forward direction must not be vertical"
    );
    let l_dir = lateral.normalize();
    let dir = |leg: u64| {
        let sign = if leg % 2 == 0 { 1.0 } else { -1.0 };
        f_dir * angle.cos() + l_dir * (sign * angle.sin())
    };
    let t = t.max(0.0);
    let completed = (t / half_period).floor();
    let legs = completed as u64;
    // Completed legs pair up into pure forward motion.
    let pairs = legs / 2;
    let mut position = start
        + (dir(0) + dir(1)) * (pairs as f64 * half_period * speed)
        + if legs % 2 == 1 {
            dir(0) * (half_period * speed)
        } else {
            Vector3::zeros()
        };
    let current = dir(legs);
    position += current * (speed * (t - completed * half_period));
    KinematicSample {
        position,
        velocity: current * speed,
        acceleration: Vector3::zeros(),
    }
}

#[allow(clippy::too_many_arguments)]
fn integrate_guidance(
    start: Vector3<f64>,
    speed: f64,
    lag: f64,
    standoff: f64,
    gain: f64,
    target: &Trajectory,
    duration: f64,
    dt: f64,
) -> Trajectory {
    assert!(lag > 0.0 && speed > 0.0 && gain > 0.0);
    let dt_sub = dt / 4.0;
    let steps = (duration / dt_sub).round() as usize;
    let desired = |p: &Vector3<f64>, t: f64| -> Vector3<f64> {
        let tgt = target.sample(t).position;
        let offset = tgt - p;
        let dist = offset.norm();
        if dist < 1e-9 {
            return Vector3::zeros();
        }
        let closing = (gain * (dist - standoff)).clamp(-speed, speed);
        offset / dist * closing
    };
    let deriv = |p: &Vector3<f64>, v: &Vector3<f64>, t: f64| -> (Vector3<f64>, Vector3<f64>) {
        (*v, (desired(p, t) - v) / lag)
    };

    let mut samples = Vec::with_capacity(steps + 1);
    let mut p = start;
    let mut v = Vector3::zeros();
    for k in 0..=steps {
        let t = k as f64 * dt_sub;
        samples.push(KinematicSample {
            position: p,
            velocity: v,
            acceleration: (desired(&p, t) - v) / lag,
        });
        // RK4 step.
        let (k1p, k1v) = deriv(&p, &v, t);
        let (k2p, k2v) = deriv(
            &(p + k1p * (dt_sub / 2.0)),
            &(v + k1v * (dt_sub / 2.0)),
            t + dt_sub / 2.0,
        );
        let (k3p, k3v) = deriv(
            &(p + k2p * (dt_sub / 2.0)),
            &(v + k2v * (dt_sub / 2.0)),
            t + dt_sub / 2.0,
        );
        let (k4p, k4v) = deriv(&(p + k3p * dt_sub), &(v + k3v * dt_sub), t + dt_sub);
        p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt_sub / 6.0);
        v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt_sub / 6.0);
    }
    Trajectory::Table { dt_sub, samples }
}

/// World attitude of a multicopter from its acceleration.
///
/// The thrust direction is `(a - g e3) / |a - g e3|`; the body `z` axis is
/// its negative and `yaw` fixes the remaining degree of freedom (the heading
/// of the body `x` axis). Fails for free-fall accelerations, where the
/// attitude is undefined.
pub fn mav_attitude_from_accel(
    a: &Vector3<f64>,
    g: f64,
    yaw: f64,
) -> Result<Rotation, SimulatorError> {
    let thrust = a - g * E3;
    let norm = thrust.norm();
    if norm <= 1e-6 {
        return Err(SimulatorError::FreeFall {
            accel_minus_gravity: norm,
        });
    }
    let h = thrust / norm;
    let z_b = -h;
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let mut x_b = heading - z_b * heading.dot(&z_b);
    if x_b.norm() < 1e-9 {
        x_b = E3 - z_b * E3.dot(&z_b);
    }
    let x_b = x_b.normalize();
    let y_b = z_b.cross(&x_b);
    Ok(Rotation::orthonormalize(Matrix3::from_columns(&[
        x_b, y_b, z_b,
    ])))
}

/// Camera attitude that looks from `eye` toward `at`, with the image `y`
/// axis aligned as closely as possible with world down (`+e3`).
pub fn look_at(eye: &Vector3<f64>, at: &Vector3<f64>) -> Rotation {
    let z_c = (at - eye).normalize();
    let mut y_ref = E3 - z_c * E3.dot(&z_c);
    if y_ref.norm() < 1e-6 {
        let x_w = Vector3::x();
        y_ref = x_w - z_c * x_w.dot(&z_c);
    }
    let y_c = y_ref.normalize();
    let x_c = y_c.cross(&z_c);
    Rotation::orthonormalize(Matrix3::from_columns(&[x_c, y_c, z_c]))
}

/// Noise injection point for synthetic detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseMode {
    /// Additive Gaussian noise on the world-frame pseudo-measurement, the
    /// thrust direction, the bearing, and the angular size.
    PseudoMeasurement,
    /// Gaussian noise on the projected vertices (per unit-plane coordinate)
    /// and a small random rotation on the detected attitude; measurements
    /// are then derived from the corrupted detection.
    Detection { sigma_vertex: f64, sigma_rot: f64 },
}

/// A complete scenario description; running it is deterministic in `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub observer: TrajectoryProgram,
    pub target: TrajectoryProgram,
    pub target_cuboid: Cuboid,
    pub target_is_mav: bool,
    pub camera: CameraIntrinsics,
    pub dt: f64,
    pub duration: f64,
    pub noise: NoiseParams,
    pub noise_mode: NoiseMode,
    pub init: FilterInit,
    pub seed: u64,
}

impl Scenario {
    pub fn build_trajectories(&self) -> Result<(Trajectory, Trajectory), SimulatorError> {
        let target = self.target.build(self.duration, self.dt, None)?;
        let observer = self
            .observer
            .build(self.duration, self.dt, Some(&target))?;
        Ok((observer, target))
    }

    pub fn frame_count(&self) -> usize {
        (self.duration / self.dt).round() as usize + 1
    }
}

/// Ground truth and synthesized measurements for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTruth {
    pub t: f64,
    pub target: KinematicSample,
    pub observer: KinematicSample,
    pub r_cw: Rotation,
    pub r_ow: Rotation,
    /// True scale (first cuboid dimension).
    pub alpha: f64,
    /// Optical-axis depth of the target center.
    pub depth: f64,
    pub h_true: Option<Vector3<f64>>,
    pub exact_detection: Option<Box3DDetection>,
    pub noisy_detection: Option<Box3DDetection>,
    pub in_fov: bool,
    /// Noisy world-frame pseudo-measurement (when in view).
    pub t_bar_noisy: Option<Vector3<f64>>,
    /// Noisy thrust direction (MAV scenarios, when in view).
    pub h_noisy: Option<Vector3<f64>>,
    /// Noisy unit bearing in the world frame (when in view).
    pub bearing_noisy: Option<Vector3<f64>>,
    /// Noisy apparent angular size (when in view).
    pub theta_noisy: Option<f64>,
}

/// Measurements derived from a detection plus the camera attitude. Shared by
/// the simulator's detection-noise mode and the offline replay path, so the
/// two produce bit-identical estimates on identical inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionMeasurements {
    pub t_bar_w: Vector3<f64>,
    pub h: Vector3<f64>,
    pub bearing_w: Vector3<f64>,
    pub theta: f64,
}

/// Derives every estimator's measurement from one detection.
pub fn measurements_from_detection(
    d: &Box3DDetection,
    r_cw: &Rotation,
    t: f64,
) -> Result<DetectionMeasurements, crate::box3d::Box3dError> {
    let n = normalized_rel_pos(d)?;
    let t_bar_w = to_world(&n, r_cw, t).t_bar_oc_w;
    let h = thrust_direction(&r_cw.compose(&d.r_oc));
    let bearing_w = r_cw.apply(&d.center.vector()).normalize();
    Ok(DetectionMeasurements {
        t_bar_w,
        h,
        bearing_w,
        theta: apparent_angular_size(d),
    })
}

/// Apparent angular size of a detection: geometric mean of the unit-plane
/// bounding-box extents of the projected vertices. For a sphere of diameter
/// `l` seen head-on at depth `z` this is `l / z`; for a box it depends on
/// the viewpoint, which is exactly what the isotropic-shape baselines have
/// to assume away.
pub fn apparent_angular_size(d: &Box3DDetection) -> f64 {
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for v in &d.vertices {
        min_x = min_x.min(v.x());
        max_x = max_x.max(v.x());
        min_y = min_y.min(v.y());
        max_y = max_y.max(v.y());
    }
    ((max_x - min_x) * (max_y - min_y)).sqrt()
}

fn draw_vec3(rng: &mut ChaCha12Rng) -> Vector3<f64> {
    let n = StandardNormal;
    Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Generates the ground truth and (noisy) measurements for one frame.
pub fn synthesize_frame(
    sc: &Scenario,
    observer: &Trajectory,
    target: &Trajectory,
    t: f64,
    rng: &mut ChaCha12Rng,
) -> FrameTruth {
    let target_s = target.sample(t);
    let observer_s = observer.sample(t);
    let alpha = sc.target_cuboid.scale();

    let r_cw = look_at(&observer_s.position, &target_s.position);
    let (r_ow, h_true) = if sc.target_is_mav {
        let yaw = heading_of(&target_s.velocity);
        let r = mav_attitude_from_accel(&target_s.acceleration, sc.noise.g, yaw)
            .expect("simulated MAV never free-falls");
        let h = thrust_direction(&r);
        (r, Some(h))
    } else {
        (level_attitude(&target_s.velocity), None)
    };

    let r_wc = r_cw.inverse();
    let p_oc = r_wc.apply(&(target_s.position - observer_s.position));
    let depth = p_oc.z;
    let r_oc = r_wc.compose(&r_ow);
    let pose_oc = Pose::new(r_oc, p_oc, Frame::Object, Frame::Camera);

    let exact_detection = project_cuboid(&pose_oc, &sc.target_cuboid)
        .ok()
        .map(|proj| Box3DDetection::from_projection(r_oc, &sc.target_cuboid, &proj));
    let in_fov = exact_detection
        .as_ref()
        .map(|d| {
            let (px, py) = unit_plane_to_pixel(&d.center, &sc.camera);
            sc.camera.contains_pixel(px, py)
        })
        .unwrap_or(false);

    let mut frame = FrameTruth {
        t,
        target: target_s,
        observer: observer_s,
        r_cw,
        r_ow,
        alpha,
        depth,
        h_true,
        exact_detection,
        noisy_detection: None,
        in_fov,
        t_bar_noisy: None,
        h_noisy: None,
        bearing_noisy: None,
        theta_noisy: None,
    };
    if !in_fov {
        return frame;
    }
    let exact = frame.exact_detection.as_ref().unwrap();

    match sc.noise_mode {
        NoiseMode::PseudoMeasurement => {
            let t_bar_true = (target_s.position - observer_s.position) / alpha;
            frame.t_bar_noisy = Some(t_bar_true + draw_vec3(rng) * sc.noise.sigma_tbar);
            if let Some(h) = h_true {
                frame.h_noisy = Some((h + draw_vec3(rng) * sc.noise.sigma_h).normalize());
            }
            let g_true = (target_s.position - observer_s.position).normalize();
            frame.bearing_noisy =
                Some((g_true + draw_vec3(rng) * sc.noise.sigma_bearing).normalize());
            let n: f64 = StandardNormal.sample(rng);
            let theta = apparent_angular_size(exact) + n * sc.noise.sigma_angle;
            frame.theta_noisy = Some(theta.max(1e-6));
            frame.noisy_detection = Some(*exact);
        }
        NoiseMode::Detection {
            sigma_vertex,
            sigma_rot,
        } => {
            let mut vertices = exact.vertices;
            for v in &mut vertices {
                let n = StandardNormal;
                let dx: f64 = n.sample(rng);
                let dy: f64 = n.sample(rng);
                *v = crate::geometry::UnitPlanePoint::from_xy(
                    v.x() + dx * sigma_vertex,
                    v.y() + dy * sigma_vertex,
                );
            }
            let axis = draw_vec3(rng);
            let angle_draw: f64 = StandardNormal.sample(rng);
            let angle = angle_draw * sigma_rot;
            let r_noisy = if axis.norm() > 1e-12 && angle.abs() > 0.0 {
                Rotation::orthonormalize(
                    *exact
                        .r_oc
                        .compose(&Rotation::from_axis_angle(axis, angle))
                        .matrix(),
                )
            } else {
                exact.r_oc
            };
            let ld = exact.ldims();
            let noisy = Box3DDetection::new(r_noisy, ld[1], ld[2], vertices, exact.center)
                .expect("normalized dims unchanged");
            // A corrupted detection that defeats the solver is treated as a
            // missed detection, not an error.
            if let Ok(m) = measurements_from_detection(&noisy, &r_cw, t) {
                frame.t_bar_noisy = Some(m.t_bar_w);
                if sc.target_is_mav {
                    frame.h_noisy = Some(m.h);
                }
                frame.bearing_noisy = Some(m.bearing_w);
                frame.theta_noisy = Some(m.theta.max(1e-6));
                frame.noisy_detection = Some(noisy);
            } else {
                frame.in_fov = false;
            }
        }
    }
    frame
}

fn heading_of(v: &Vector3<f64>) -> f64 {
    if v.xy().norm() < 1e-6 {
        0.0
    } else {
        v.y.atan2(v.x)
    }
}

/// Level attitude with the body `x` axis along the horizontal velocity.
fn level_attitude(v: &Vector3<f64>) -> Rotation {
    let yaw = heading_of(v);
    Rotation::yaw(yaw)
}

/// The estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    BearingBox,
    BearingBoxMav,
    BearingOnly,
    BearingAngle,
}

impl Estimator {
    pub const ALL: [Estimator; 4] = [
        Estimator::BearingBox,
        Estimator::BearingBoxMav,
        Estimator::BearingOnly,
        Estimator::BearingAngle,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Estimator::BearingBox => "bearing-box",
            Estimator::BearingBoxMav => "bearing-box-mav",
            Estimator::BearingOnly => "bearing-only",
            Estimator::BearingAngle => "bearing-angle",
        }
    }

    /// True when the estimator consumes thrust-direction measurements.
    pub fn needs_mav(&self) -> bool {
        matches!(self, Estimator::BearingBoxMav)
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bearing-box" => Ok(Estimator::BearingBox),
            "bearing-box-mav" => Ok(Estimator::BearingBoxMav),
            "bearing-only" => Ok(Estimator::BearingOnly),
            "bearing-angle" => Ok(Estimator::BearingAngle),
            other => Err(format!(
                "unknown estimator '{other}' (expected one of: bearing-box, bearing-box-mav, bearing-only, bearing-angle)"
            )),
        }
    }
}

/// One step of input to an estimator: camera pose plus (optionally) the
/// synthesized measurements, plus (optionally) ground truth for scoring.
/// Frames without measurements are predict-only steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInput {
    pub t: f64,
    pub p_c_w: Vector3<f64>,
    pub r_cw: Rotation,
    pub t_bar_w: Option<Vector3<f64>>,
    pub h: Option<Vector3<f64>>,
    pub bearing: Option<Vector3<f64>>,
    pub theta: Option<f64>,
    pub truth: Option<StepTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepTruth {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub alpha: f64,
    pub depth: f64,
}

impl StepInput {
    pub fn from_frame(f: &FrameTruth) -> Self {
        StepInput {
            t: f.t,
            p_c_w: f.observer.position,
            r_cw: f.r_cw,
            t_bar_w: f.t_bar_noisy,
            h: f.h_noisy,
            bearing: f.bearing_noisy,
            theta: f.theta_noisy,
            truth: Some(StepTruth {
                p: f.target.position,
                v: f.target.velocity,
                a: f.target.acceleration,
                alpha: f.alpha,
                depth: f.depth,
            }),
        }
    }
}

enum FilterState {
    Common(CommonState),
    Mav(MavState),
    Bearing(BearingOnlyState),
}

/// Runs one estimator over a step stream. Steps without measurements are
/// predict-only; the first step never predicts.
pub fn run_estimator(
    estimator: Estimator,
    steps: &[StepInput],
    init: &FilterInit,
    noise: &NoiseParams,
    scenario: &str,
    seed: u64,
) -> EstimateTrace {
    let mut state = match estimator {
        Estimator::BearingBox | Estimator::BearingAngle => {
            FilterState::Common(CommonState::init(init))
        }
        Estimator::BearingBoxMav => FilterState::Mav(MavState::init(init)),
        Estimator::BearingOnly => FilterState::Bearing(BearingOnlyState::init(init)),
    };
    let mut records = Vec::with_capacity(steps.len());
    let mut prev_t = None;

    for step in steps {
        if let Some(p) = prev_t {
            let dt = step.t - p;
            if dt > 0.0 {
                state = match state {
                    FilterState::Common(s) => FilterState::Common(predict_common(&s, dt, noise)),
                    FilterState::Mav(s) => FilterState::Mav(predict_mav(&s, dt, noise)),
                    FilterState::Bearing(s) => {
                        FilterState::Bearing(predict_bearing_only(&s, dt, noise))
                    }
                };
            }
        }
        prev_t = Some(step.t);

        let mut updated = false;
        if let Some(t_bar) = step.t_bar_w {
            let frame = MeasurementFrame {
                t_bar: WorldPseudoMeasurement {
                    t_bar_oc_w: t_bar,
                    timestamp: step.t,
                },
                h: step.h,
                p_c_w: step.p_c_w,
            };
            state = match (estimator, state) {
                (Estimator::BearingBox, FilterState::Common(s)) => {
                    updated = true;
                    FilterState::Common(update_common(&s, &frame, noise))
                }
                (Estimator::BearingBoxMav, FilterState::Mav(s)) => {
                    if step.h.is_some() {
                        updated = true;
                        FilterState::Mav(update_mav(&s, &frame, noise).expect("h checked"))
                    } else {
                        FilterState::Mav(s)
                    }
                }
                (Estimator::BearingOnly, FilterState::Bearing(s)) => {
                    if let Some(bearing) = step.bearing {
                        updated = true;
                        FilterState::Bearing(
                            update_bearing_only(&s, &bearing, &step.p_c_w, noise)
                                .expect("bearing is nonzero"),
                        )
                    } else {
                        FilterState::Bearing(s)
                    }
                }
                (Estimator::BearingAngle, FilterState::Common(s)) => {
                    match (step.bearing, step.theta) {
                        (Some(bearing), Some(theta)) => {
                            updated = true;
                            FilterState::Common(
                                update_bearing_angle(&s, &bearing, theta, &step.p_c_w, noise)
                                    .expect("theta is positive"),
                            )
                        }
                        _ => FilterState::Common(s),
                    }
                }
                (_, s) => s,
            };
        }

        records.push(record_step(&state, step, updated));
    }

    EstimateTrace {
        estimator,
        scenario: scenario.to_string(),
        seed,
        records,
    }
}

fn dyn_cov<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> DMatrix<f64> {
    DMatrix::from_iterator(N, N, m.iter().copied())
}

fn record_step(state: &FilterState, step: &StepInput, updated: bool) -> TraceRecord {
    let r_wc = step.r_cw.inverse();
    let depth_of = |p: &Vector3<f64>| r_wc.apply(&(p - step.p_c_w)).z;

    let (p, v, a, alpha, nees) = match state {
        FilterState::Common(s) => {
            let nees = step.truth.map(|tr| {
                let truth = DVector::from_vec(vec![
                    tr.p.x, tr.p.y, tr.p.z, tr.v.x, tr.v.y, tr.v.z, tr.alpha,
                ]);
                let est = DVector::from_column_slice(s.as_vector().as_slice());
                metrics::nees(&truth, &est, &dyn_cov(&s.cov)).value
            });
            (s.p, s.v, None, Some(s.alpha), nees)
        }
        FilterState::Mav(s) => {
            let nees = step.truth.map(|tr| {
                let truth = DVector::from_vec(vec![
                    tr.p.x, tr.p.y, tr.p.z, tr.v.x, tr.v.y, tr.v.z, tr.a.x, tr.a.y, tr.a.z,
                    tr.alpha,
                ]);
                let est = DVector::from_column_slice(s.as_vector().as_slice());
                metrics::nees(&truth, &est, &dyn_cov(&s.cov)).value
            });
            (s.p, s.v, Some(s.a), Some(s.alpha), nees)
        }
        FilterState::Bearing(s) => {
            let nees = step.truth.map(|tr| {
                let truth =
                    DVector::from_vec(vec![tr.p.x, tr.p.y, tr.p.z, tr.v.x, tr.v.y, tr.v.z]);
                let est = DVector::from_column_slice(s.as_vector().as_slice());
                metrics::nees(&truth, &est, &dyn_cov(&s.cov)).value
            });
            (s.p, s.v, None, None, nees)
        }
    };

    TraceRecord {
        t: step.t,
        p,
        v,
        a,
        alpha,
        truth_p: step.truth.map(|tr| tr.p),
        depth_true: step.truth.map(|tr| tr.depth),
        depth_est: depth_of(&p),
        nees,
        in_fov: updated,
    }
}

/// Frames plus one trace per selected estimator.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub frames: Vec<FrameTruth>,
    pub traces: Vec<EstimateTrace>,
}

/// Generates all frames for a scenario (deterministic in the seed).
pub fn generate_frames(sc: &Scenario) -> Result<Vec<FrameTruth>, SimulatorError> {
    let (observer, target) = sc.build_trajectories()?;
    let mut rng = ChaCha12Rng::seed_from_u64(sc.seed);
    let steps = (sc.duration / sc.dt).round() as usize;
    Ok((0..=steps)
        .map(|k| synthesize_frame(sc, &observer, &target, k as f64 * sc.dt, &mut rng))
        .collect())
}

/// Runs the selected estimators over one shared measurement stream.
///
/// All estimators see the same frames (same noise draws), so their metrics
/// are directly comparable.
pub fn run_scenario(sc: &Scenario, estimators: &[Estimator]) -> Result<RunOutput, SimulatorError> {
    for e in estimators {
        if e.needs_mav() && !sc.target_is_mav {
            return Err(SimulatorError::EstimatorNeedsMav { estimator: *e });
        }
    }
    let frames = generate_frames(sc)?;
    let steps: Vec<StepInput> = frames.iter().map(StepInput::from_frame).collect();
    let traces = estimators
        .iter()
        .map(|&e| run_estimator(e, &steps, &sc.init, &sc.noise, &sc.name, sc.seed))
        .collect();
    Ok(RunOutput { frames, traces })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const G: f64 = 9.81;

    fn sample_programs() -> Vec<TrajectoryProgram> {
        vec![
            TrajectoryProgram::Stationary {
                position: Vector3::new(1.0, 2.0, -3.0),
            },
            TrajectoryProgram::ConstantVelocity {
                position: Vector3::new(0.0, 0.0, -1.0),
                velocity: Vector3::new(0.5, -0.2, 0.0),
            },
            TrajectoryProgram::Circle {
                center: Vector3::new(10.0, 0.0, -5.0),
                radius: 4.0,
                speed: 4.0,
                phase: 0.3,
            },
            TrajectoryProgram::Spiral {
                center: Vector3::new(0.0, 0.0, -5.0),
                radius: 2.0,
                speed: 1.5,
                climb_rate: -0.2,
                phase: 0.0,
            },
            TrajectoryProgram::Zigzag {
                start: Vector3::new(0.0, 0.0, -1.0),
                forward: Vector3::new(0.0, 1.0, 0.0),
                speed: 1.0,
                half_period: 2.0,
                angle: 0.5,
            },
            TrajectoryProgram::StraightLines {
                waypoints: vec![
                    Vector3::new(0.0, 0.0, 0.0),
                    Vector3::new(5.0, 0.0, 0.0),
                    Vector3::new(5.0, 5.0, 0.0),
                ],
                speed: 1.0,
            },
            TrajectoryProgram::Polynomial {
                coeffs: vec![
                    Vector3::new(1.0, 0.0, 0.0),
                    Vector3::new(0.0, 1.0, 0.0),
                    Vector3::new(0.1, 0.0, -0.05),
                ],
            },
        ]
    }

    #[test]
    fn circle_has_centripetal_acceleration() {
        let p = TrajectoryProgram::Circle {
            center: Vector3::zeros(),
            radius: 4.0,
            speed: 4.0,
            phase: 0.0,
        };
        let traj = p.build(10.0, 0.02, None).unwrap();
        for k in 0..50 {
            let s = traj.sample(0.2 * k as f64);
            assert_relative_eq!(s.acceleration.norm(), 4.0, max_relative = 1e-12);
            assert_relative_eq!(s.velocity.norm(), 4.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn stationary_and_polynomial_samples() {
        let s = sample_closed(
            &TrajectoryProgram::Stationary {
                position: Vector3::new(1.0, 1.0, 1.0),
            },
            3.0,
        );
        assert_eq!(s.velocity, Vector3::zeros());
        assert_eq!(s.acceleration, Vector3::zeros());

        let p = TrajectoryProgram::Polynomial {
            coeffs: vec![Vector3::new(1.0, 0.0, 0.0), Vector3::new(0.0, 1.0, 0.0)],
        };
        let s = sample_closed(&p, 2.0);
        assert_eq!(s.position, Vector3::new(1.0, 2.0, 0.0));
        assert_eq!(s.velocity, Vector3::new(0.0, 1.0, 0.0));
        assert_eq!(s.acceleration, Vector3::zeros());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // Central differences at dt = 0.02 must match the analytic
        // derivatives to O(dt^2) wherever the trajectory is smooth; samples
        // whose stencil straddles a zigzag corner or waypoint are skipped.
        let dt = 0.02;
        for program in sample_programs() {
            let traj = program.build(10.0, dt, None).unwrap();
            for k in 2..498 {
                let t = k as f64 * dt;
                if !is_smooth_at(&program, t, 2.0 * dt) {
                    continue;
                }
                let prev = traj.sample(t - dt);
                let here = traj.sample(t);
                let next = traj.sample(t + dt);
                let fd_v = (next.position - prev.position) / (2.0 * dt);
                let fd_a = (next.position - here.position * 2.0 + prev.position) / (dt * dt);
                let v_scale = here.velocity.norm().max(1.0);
                let a_scale = here.acceleration.norm().max(1.0);
                assert!(
                    (fd_v - here.velocity).norm() / v_scale < 1e-3,
                    "{program:?} at t={t}: fd velocity {fd_v:?} vs {:?}",
                    here.velocity
                );
                assert!(
                    (fd_a - here.acceleration).norm() / a_scale < 1e-3,
                    "{program:?} at t={t}: fd accel {fd_a:?} vs {:?}",
                    here.acceleration
                );
            }
        }
    }

    fn is_smooth_at(p: &TrajectoryProgram, t: f64, margin: f64) -> bool {
        match p {
            TrajectoryProgram::Zigzag { half_period, .. } => {
                let phase = t / half_period - (t / half_period).round();
                (phase * half_period).abs() > margin
            }
            TrajectoryProgram::StraightLines { waypoints, speed } => {
                let mut cum = 0.0;
                for w in waypoints.windows(2) {
                    cum += (w[1] - w[0]).norm();
                    let t_corner = cum / speed;
                    if (t - t_corner).abs() <= margin {
                        return false;
                    }
                }
                true
            }
            _ => true,
        }
    }

    #[test]
    fn mav_attitude_basics() {
        // Hover: thrust points straight up.
        let r = mav_attitude_from_accel(&Vector3::zeros(), G, 0.0).unwrap();
        assert_relative_eq!(
            thrust_direction(&r),
            Vector3::new(0.0, 0.0, -1.0),
            epsilon = 1e-12
        );

        // Horizontal acceleration tilts the thrust.
        let a = Vector3::new(4.0, 0.0, 0.0);
        let r = mav_attitude_from_accel(&a, G, 0.0).unwrap();
        let expected = (a - G * E3).normalize();
        assert_relative_eq!(thrust_direction(&r), expected, epsilon = 1e-12);

        assert!(matches!(
            mav_attitude_from_accel(&(G * E3), G, 0.0),
            Err(SimulatorError::FreeFall { .. })
        ));
    }

    #[test]
    fn mav_attitude_round_trip_random() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        for _ in 0..300 {
            let a = draw_vec3(&mut rng) * 3.0;
            let yaw: f64 = StandardNormal.sample(&mut rng);
            let r = mav_attitude_from_accel(&a, G, yaw).unwrap();
            let expected = (a - G * E3).normalize();
            assert_relative_eq!(thrust_direction(&r), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn attitude_consistency_projector_annihilates_accel() {
        // P_h (a - g e3) = 0 exactly for the synthesized attitude.
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let a = draw_vec3(&mut rng) * 2.0;
            let r = mav_attitude_from_accel(&a, G, 0.3).unwrap();
            let h = thrust_direction(&r);
            let p_h = crate::filters::projector(&h).unwrap();
            assert!((p_h * (a - G * E3)).norm() < 1e-10);
        }
    }

    fn test_scenario(mode: NoiseMode) -> Scenario {
        Scenario {
            name: "test".into(),
            observer: TrajectoryProgram::Stationary {
                position: Vector3::new(0.0, 0.0, -5.0),
            },
            target: TrajectoryProgram::Circle {
                center: Vector3::new(10.0, 0.0, -5.0),
                radius: 4.0,
                speed: 4.0,
                phase: 0.0,
            },
            target_cuboid: Cuboid::new(0.92, 0.92, 0.55).unwrap(),
            target_is_mav: true,
            camera: CameraIntrinsics::default(),
            dt: 0.02,
            duration: 2.0,
            noise: NoiseParams::default(),
            noise_mode: mode,
            init: FilterInit::default(),
            seed: 0,
        }
    }

    #[test]
    fn zero_noise_detection_equals_exact() {
        let mut sc = test_scenario(NoiseMode::PseudoMeasurement);
        sc.noise.sigma_tbar = 0.0;
        sc.noise.sigma_h = 0.0;
        sc.noise.sigma_bearing = 0.0;
        sc.noise.sigma_angle = 0.0;
        let frames = generate_frames(&sc).unwrap();
        for f in &frames {
            assert!(f.in_fov);
            let exact = f.exact_detection.as_ref().unwrap();
            let noisy = f.noisy_detection.as_ref().unwrap();
            assert_eq!(exact, noisy);
            let t_bar_true = (f.target.position - f.observer.position) / f.alpha;
            assert_relative_eq!(f.t_bar_noisy.unwrap(), t_bar_true, epsilon = 1e-12);
            assert_relative_eq!(f.h_noisy.unwrap(), f.h_true.unwrap(), epsilon = 1e-12);
        }

        let mut sc = test_scenario(NoiseMode::Detection {
            sigma_vertex: 0.0,
            sigma_rot: 0.0,
        });
        sc.noise.sigma_tbar = 0.0;
        let frames = generate_frames(&sc).unwrap();
        for f in &frames {
            let t_bar_true = (f.target.position - f.observer.position) / f.alpha;
            // Through the solver: recovered within solver tolerance.
            assert_relative_eq!(f.t_bar_noisy.unwrap(), t_bar_true, max_relative = 1e-9);
        }
    }

    #[test]
    fn thrust_noise_band() {
        // With additive noise and renormalization the angular deviation of
        // the noisy thrust direction stays within a loose band around
        // sigma_h (the renormalization distorts the Gaussian).
        let sc = test_scenario(NoiseMode::PseudoMeasurement);
        let sigma_h = sc.noise.sigma_h;
        let (observer, target) = sc.build_trajectories().unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let mut sq_sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let f = synthesize_frame(&sc, &observer, &target, 0.5, &mut rng);
            let angle = f
                .h_noisy
                .unwrap()
                .dot(&f.h_true.unwrap())
                .clamp(-1.0, 1.0)
                .acos();
            sq_sum += angle * angle;
        }
        let rms = (sq_sum / n as f64).sqrt();
        assert!(
            rms > 0.5 * sigma_h && rms < 3.0 * sigma_h,
            "angular rms {rms} outside [{}, {}]",
            0.5 * sigma_h,
            3.0 * sigma_h
        );
    }

    #[test]
    fn target_behind_camera_is_out_of_fov() {
        let mut sc = test_scenario(NoiseMode::PseudoMeasurement);
        // Observer looks at the target's *initial* position but the target
        // teleports behind: force by pointing the camera away via a target
        // program directly behind the look direction is impossible (the
        // camera tracks the target), so shrink the field of view instead:
        // a target on the optical axis is always in view, so test the
        // depth check with a target at the camera position.
        sc.target = TrajectoryProgram::Stationary {
            position: Vector3::new(0.0, 0.0, -5.0) + Vector3::new(1e-12, 0.0, 0.0),
        };
        sc.target_is_mav = false;
        let frames = generate_frames(&sc).unwrap();
        // Degenerate geometry: the cuboid straddles the camera plane.
        assert!(frames.iter().all(|f| !f.in_fov));
    }

    #[test]
    fn on_axis_target_always_in_fov() {
        let sc = test_scenario(NoiseMode::PseudoMeasurement);
        let frames = generate_frames(&sc).unwrap();
        // The camera tracks the target, putting it on the optical axis.
        assert!(frames.iter().all(|f| f.in_fov));
        assert!(frames.iter().all(|f| f.depth > 0.0));
    }

    #[test]
    fn determinism_identical_seeds_identical_traces() {
        let sc = test_scenario(NoiseMode::PseudoMeasurement);
        let a = run_scenario(&sc, &[Estimator::BearingBoxMav, Estimator::BearingOnly]).unwrap();
        let b = run_scenario(&sc, &[Estimator::BearingBoxMav, Estimator::BearingOnly]).unwrap();
        assert_eq!(a.traces.len(), b.traces.len());
        for (ta, tb) in a.traces.iter().zip(b.traces.iter()) {
            assert_eq!(ta.records.len(), tb.records.len());
            for (ra, rb) in ta.records.iter().zip(tb.records.iter()) {
                assert_eq!(ra, rb, "records differ");
            }
        }
    }

    #[test]
    fn different_seed_changes_noise() {
        let mut sc = test_scenario(NoiseMode::PseudoMeasurement);
        let a = generate_frames(&sc).unwrap();
        sc.seed = 1;
        let b = generate_frames(&sc).unwrap();
        assert_ne!(a[0].t_bar_noisy, b[0].t_bar_noisy);
    }

    #[test]
    fn estimator_needing_mav_is_rejected_on_common_target() {
        let mut sc = test_scenario(NoiseMode::PseudoMeasurement);
        sc.target_is_mav = false;
        assert!(matches!(
            run_scenario(&sc, &[Estimator::BearingBoxMav]),
            Err(SimulatorError::EstimatorNeedsMav { .. })
        ));
    }

    #[test]
    fn guidance_requires_target_and_pursues_it() {
        let g = TrajectoryProgram::Guidance {
            start: Vector3::new(0.0, 0.0, -1.0),
            speed: 2.0,
            lag: 0.5,
            standoff: 3.0,
            gain: 1.0,
        };
        assert!(matches!(
            g.build(10.0, 0.02, None),
            Err(SimulatorError::GuidanceNeedsTarget)
        ));
        let target = TrajectoryProgram::ConstantVelocity {
            position: Vector3::new(10.0, 0.0, -1.0),
            velocity: Vector3::new(0.0, 0.5, 0.0),
        }
        .build(30.0, 0.02, None)
        .unwrap();
        let chase = g.build(30.0, 0.02, Some(&target)).unwrap();
        let d0 = (chase.sample(0.0).position - target.sample(0.0).position).norm();
        let d_end = (chase.sample(30.0).position - target.sample(30.0).position).norm();
        assert!(d_end < d0, "guidance did not close distance");
        assert!(
            (d_end - 3.0).abs() < 1.0,
            "guidance did not settle near standoff: {d_end}"
        );
    }
}
