//! Target motion and size estimation from monocular 3D bounding-box
//! detections, with bearing-only and bearing-angle baselines, a numeric
//! observability analyzer, and a deterministic simulation harness.
//!
//! The crate is organized along the processing pipeline:
//!
//! * [`geometry`] — frames, rotations, the cuboid model, pinhole projection.
//! * [`box3d`] — from a 3D detection to the normalized relative position and
//!   the world-frame pseudo-measurement.
//! * [`filters`] — the pseudo-linear Kalman estimators (7-state, 10-state
//!   MAV, and the two baselines).
//! * [`observability`] — stacked observation matrices and rank verdicts.
//! * [`simulator`] — trajectory programs, synthetic detections, scenario
//!   runner.
//! * [`metrics`] — NIDE, NEES, per-axis errors, summary records.
//! * [`scenarios`] — the built-in scenario catalog.
//! * [`io`] — trace/detection/verdict serialization with stable formatting.

pub mod box3d;
pub mod filters;
pub mod geometry;
pub mod io;
pub mod metrics;
pub mod observability;
pub mod scenarios;
pub mod simulator;

pub use box3d::{normalized_rel_pos, thrust_direction, to_world, Box3DDetection, NormalizedRelPos, WorldPseudoMeasurement};
pub use filters::{
    predict_bearing_only, predict_common, predict_mav, projector, update_bearing_angle,
    update_bearing_only, update_common, update_mav, BearingOnlyState, CommonState, FilterInit,
    MavState, MeasurementFrame, NoiseParams,
};
pub use geometry::{
    cuboid_vertices, pixel_to_unit_plane, project_cuboid, project_point, unit_plane_to_pixel,
    CameraIntrinsics, Cuboid, Frame, Pose, Rotation, UnitPlanePoint,
};
pub use metrics::{axis_errors, nees, nide, EstimateTrace, MetricSummary, TraceRecord};
pub use observability::{
    appendix_a_transform, build_first_order_stack, build_polynomial_stack,
    build_second_order_stack, check_theorem_conditions, ObservabilityVerdict, ObservationStack,
    StackObservation, TruthSample,
};
pub use simulator::{
    mav_attitude_from_accel, run_scenario, sample_trajectory, synthesize_frame, Estimator,
    FrameTruth, KinematicSample, NoiseMode, RunOutput, Scenario, Trajectory, TrajectoryProgram,
};
