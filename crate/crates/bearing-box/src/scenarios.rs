//! Built-in scenario catalog.
//!
//! World frame: gravity along `+z`, so negative `z` is up. Observers sit a
//! few meters from the target track and the camera is always pointed at the
//! target's true position (a perfect gimbal), which keeps the detection in
//! frame whenever the geometry allows it.
//!
//! The four numbered cases step down the observer's motion order: spiral
//! (case1), zigzag (case2), pursuit guidance (case3), stationary (case4).
//! The remaining presets mirror the hardware experiments: a stationary
//! observer watching a fast circling MAV, and a ground car followed with and
//! without lateral weaving.

use crate::filters::{FilterInit, NoiseParams};
use crate::geometry::{CameraIntrinsics, Cuboid};
use crate::simulator::{Estimator, NoiseMode, Scenario, TrajectoryProgram};
use nalgebra::Vector3;

/// Names accepted by `builtin`.
pub const BUILTIN_NAMES: [&str; 7] = [
    "case1",
    "case2",
    "case3",
    "case4",
    "airsim-circle",
    "car-zigzag",
    "car-straight",
];

/// MAV-sized cuboid used by the aerial scenarios.
fn mav_cuboid() -> Cuboid {
    Cuboid::new(0.92, 0.92, 0.55).expect("static dims")
}

/// Car-sized cuboid used by the ground scenarios.
fn car_cuboid() -> Cuboid {
    Cuboid::new(0.28, 0.24, 0.14).expect("static dims")
}

fn base(name: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        observer: TrajectoryProgram::Stationary {
            position: Vector3::zeros(),
        },
        target: TrajectoryProgram::Stationary {
            position: Vector3::new(10.0, 0.0, 0.0),
        },
        target_cuboid: mav_cuboid(),
        target_is_mav: true,
        camera: CameraIntrinsics::default(),
        dt: 0.02,
        duration: 12.0,
        noise: NoiseParams::default(),
        noise_mode: NoiseMode::PseudoMeasurement,
        init: FilterInit::default(),
        seed: 0,
    }
}

/// Returns a built-in scenario by name.
pub fn builtin(name: &str) -> Option<Scenario> {
    let mut sc = base(name);
    match name {
        // Spiraling camera, circling MAV: strong observability for every
        // estimator.
        "case1" => {
            sc.observer = TrajectoryProgram::Spiral {
                center: Vector3::new(0.0, 0.0, -4.0),
                radius: 2.0,
                speed: 1.5,
                climb_rate: -0.15,
                phase: 0.0,
            };
            sc.target = TrajectoryProgram::Circle {
                center: Vector3::new(10.0, 0.0, -5.0),
                radius: 4.0,
                speed: 2.0,
                phase: 0.0,
            };
            sc.noise.sigma_v = 0.02;
            sc.noise.sigma_a = 0.05;
        }
        // Zigzagging camera, constant-velocity car.
        "case2" => {
            sc.observer = TrajectoryProgram::Zigzag {
                start: Vector3::new(0.0, -1.0, -1.0),
                forward: Vector3::new(0.0, 1.0, 0.0),
                speed: 0.9,
                half_period: 2.0,
                angle: 0.6,
            };
            sc.target = TrajectoryProgram::ConstantVelocity {
                position: Vector3::new(8.0, 0.0, -0.12),
                velocity: Vector3::new(0.0, 0.8, 0.0),
            };
            sc.target_cuboid = car_cuboid();
            sc.target_is_mav = false;
        }
        // Pursuit-guidance camera, constant-velocity car: the observer
        // settles at a constant distance, which weakens observability.
        "case3" => {
            sc.observer = TrajectoryProgram::Guidance {
                start: Vector3::new(0.0, -1.0, -1.0),
                speed: 1.5,
                lag: 0.8,
                standoff: 5.0,
                gain: 0.8,
            };
            sc.target = TrajectoryProgram::ConstantVelocity {
                position: Vector3::new(8.0, 0.0, -0.12),
                velocity: Vector3::new(0.0, 0.8, 0.0),
            };
            sc.target_cuboid = car_cuboid();
            sc.target_is_mav = false;
        }
        // Stationary camera, fast circling MAV: unobservable for the
        // baselines, handled by the attitude-aware estimator.
        "case4" => {
            sc.observer = TrajectoryProgram::Stationary {
                position: Vector3::new(0.0, 0.0, -5.0),
            };
            sc.target = TrajectoryProgram::Circle {
                center: Vector3::new(10.0, 0.0, -5.0),
                radius: 4.0,
                speed: 4.0,
                phase: 0.0,
            };
            sc.noise.sigma_v = 0.01;
            sc.noise.sigma_a = 0.1;
        }
        // The same stationary-observer circle with the simulation-study
        // parameter set (tighter initial covariance, small process noise).
        "airsim-circle" => {
            sc.observer = TrajectoryProgram::Stationary {
                position: Vector3::new(0.0, 0.0, -5.0),
            };
            sc.target = TrajectoryProgram::Circle {
                center: Vector3::new(10.0, 0.0, -5.0),
                radius: 4.0,
                speed: 4.0,
                phase: 0.0,
            };
            sc.noise.sigma_v = 0.0001;
            sc.noise.sigma_a = 0.001_f64.sqrt();
            sc.init.cov0 = 2.0;
        }
        // Car followed with lateral weaving.
        "car-zigzag" => {
            sc.observer = TrajectoryProgram::Zigzag {
                start: Vector3::new(1.5, -4.0, -1.0),
                forward: Vector3::new(0.0, 1.0, 0.0),
                speed: 1.0,
                half_period: 2.0,
                angle: 0.5,
            };
            sc.target = TrajectoryProgram::ConstantVelocity {
                position: Vector3::new(1.5, 2.0, -0.12),
                velocity: Vector3::new(0.0, 0.8, 0.0),
            };
            sc.target_cuboid = car_cuboid();
            sc.target_is_mav = false;
        }
        // Car followed from straight behind, closing gently: acceleration
        // along the bearing, no lateral motion at all.
        "car-straight" => {
            sc.observer = TrajectoryProgram::Polynomial {
                coeffs: vec![
                    Vector3::new(1.5, -4.0, -1.0),
                    Vector3::new(0.0, 0.8, 0.0),
                    Vector3::new(0.0, 0.025, 0.0),
                ],
            };
            sc.target = TrajectoryProgram::ConstantVelocity {
                position: Vector3::new(1.5, 2.0, -0.12),
                velocity: Vector3::new(0.0, 0.8, 0.0),
            };
            sc.target_cuboid = car_cuboid();
            sc.target_is_mav = false;
        }
        _ => return None,
    }
    Some(sc)
}

/// Every estimator applicable to a scenario (the attitude-aware estimator
/// needs a MAV target).
pub fn applicable_estimators(sc: &Scenario) -> Vec<Estimator> {
    Estimator::ALL
        .iter()
        .copied()
        .filter(|e| !e.needs_mav() || sc.target_is_mav)
        .collect()
}
