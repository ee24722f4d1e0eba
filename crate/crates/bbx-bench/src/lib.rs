//! Shared fixtures for the criterion benchmarks.

use bearing_box::box3d::Box3DDetection;
use bearing_box::geometry::{project_cuboid, Cuboid, Frame, Pose, Rotation};
use bearing_box::scenarios;
use bearing_box::simulator::Scenario;
use nalgebra::Vector3;

/// An exact detection of an MAV-sized cuboid a few meters out.
pub fn sample_detection() -> Box3DDetection {
    let cuboid = Cuboid::new(0.92, 0.92, 0.55).expect("static dims");
    let pose = Pose::new(
        Rotation::from_axis_angle(Vector3::new(0.2, -0.7, 0.4), 0.8),
        Vector3::new(0.6, -0.3, 9.0),
        Frame::Object,
        Frame::Camera,
    );
    let proj = project_cuboid(&pose, &cuboid).expect("in front of camera");
    Box3DDetection::from_projection(pose.rotation, &cuboid, &proj)
}

/// A short stationary-observer scenario for end-to-end benchmarks.
pub fn short_scenario() -> Scenario {
    let mut sc = scenarios::builtin("case4").expect("builtin");
    sc.duration = 2.0;
    sc
}
