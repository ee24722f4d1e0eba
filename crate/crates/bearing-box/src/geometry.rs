//! Frames, rotations, pinhole projection, and the cuboid target model.
//!
//! World-frame convention: gravity points along `+z` (`e3`), so "up" is `-z`.
//! The camera frame is the usual computer-vision one: `z` along the optical
//! axis, `x` right, `y` down in the image. All projections land on the unit
//! image plane (`z = 1`), not on the pixel grid; [`CameraIntrinsics`] converts
//! between the two.

use nalgebra::{Matrix3, Vector3};
use std::fmt;

/// Third column of the identity; the optical axis / gravity direction.
pub const E3: Vector3<f64> = Vector3::new(0.0, 0.0, 1.0);

/// Errors produced by the geometric primitives.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// A point to be projected lies on or behind the camera plane.
    NonPositiveDepth { element: BoxElement, depth: f64 },
    /// A matrix failed the orthonormality / determinant check.
    NotARotation { ortho_defect: f64, det: f64 },
    /// A cuboid dimension is zero or negative.
    NonPositiveDimension { index: usize, value: f64 },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::NonPositiveDepth { element, depth } => {
                write!(f, "{element} has non-positive depth {depth}")
            }
            GeometryError::NotARotation { ortho_defect, det } => write!(
                f,
                "matrix is not a rotation (orthonormality defect {ortho_defect:.3e}, det {det})"
            ),
            GeometryError::NonPositiveDimension { index, value } => {
                write!(f, "cuboid dimension {index} is not positive: {value}")
            }
        }
    }
}

impl std::error::Error for GeometryError {}

/// Identifies which part of a projected box caused an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxElement {
    Vertex(usize),
    Center,
    Point,
}

impl fmt::Display for BoxElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoxElement::Vertex(i) => write!(f, "vertex {i}"),
            BoxElement::Center => write!(f, "center"),
            BoxElement::Point => write!(f, "point"),
        }
    }
}

/// Pinhole camera intrinsics in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Self {
        assert!(fx > 0.0 && fy > 0.0, "focal lengths must be positive");
        assert!(width > 0 && height > 0, "image size must be positive");
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    /// True when a pixel coordinate falls inside the image bounds.
    pub fn contains_pixel(&self, px: f64, py: f64) -> bool {
        px >= 0.0 && px <= f64::from(self.width) && py >= 0.0 && py <= f64::from(self.height)
    }
}

impl Default for CameraIntrinsics {
    /// A 1280x720 camera with 600 px focal length and centered principal point.
    fn default() -> Self {
        Self::new(600.0, 600.0, 640.0, 360.0, 1280, 720)
    }
}

/// A 3x3 orthonormal matrix with determinant +1.
///
/// Stored as a plain matrix; validated constructors keep `R^T R = I` within
/// `1e-9` and `det R = 1` within `1e-9`. Noisy inputs go through
/// [`Rotation::orthonormalize`], which projects onto the nearest rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

/// Validation tolerance for orthonormality and determinant.
pub const ROTATION_TOL: f64 = 1e-9;

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Validates and wraps a matrix.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self, GeometryError> {
        let defect = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if defect > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(GeometryError::NotARotation {
                ortho_defect: defect,
                det,
            });
        }
        Ok(Rotation(m))
    }

    /// Nearest rotation to an arbitrary matrix (polar projection via SVD).
    ///
    /// Used to repair noisy rotation measurements before they enter any
    /// geometric computation.
    pub fn orthonormalize(m: Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("svd vectors requested");
        let v_t = svd.v_t.expect("svd vectors requested");
        // Flip the last column if needed so the determinant stays +1.
        let mut s = Matrix3::identity();
        if (u * v_t).determinant() < 0.0 {
            s[(2, 2)] = -1.0;
        }
        Rotation(u * s * v_t)
    }

    /// Rotation of `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        assert!(n > 1e-12, "axis must be nonzero");
        Rotation(*nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            angle,
        )
        .matrix())
    }

    /// Rotation about the world `z` axis (right-handed).
    pub fn yaw(angle: f64) -> Self {
        Self::from_axis_angle(E3, angle)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }
}

impl std::ops::Mul<&Rotation> for &Rotation {
    type Output = Rotation;
    fn mul(self, rhs: &Rotation) -> Rotation {
        self.compose(rhs)
    }
}

/// Reference frames used by [`Pose`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    World,
    Camera,
    Object,
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::World => write!(f, "world"),
            Frame::Camera => write!(f, "camera"),
            Frame::Object => write!(f, "object"),
        }
    }
}

/// Rigid transform taking coordinates in `from` to coordinates in `to`.
///
/// `p_to = R p_from + t`, so `rotation` is `R_from^to` and `translation` is
/// the origin of `from` expressed in `to`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    pub from: Frame,
    pub to: Frame,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, from: Frame, to: Frame) -> Self {
        Self {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(p) + self.translation
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            translation: -r_inv.apply(&self.translation),
            rotation: r_inv,
            from: self.to,
            to: self.from,
        }
    }

    /// `other` then `self`; frames must chain.
    pub fn compose(&self, other: &Pose) -> Pose {
        assert_eq!(
            self.from, other.to,
            "pose composition frames do not chain: {} -> {} after {} -> {}",
            self.from, self.to, other.from, other.to,
        );
        Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.apply(&other.translation) + self.translation,
            from: other.from,
            to: self.to,
        }
    }
}

/// Cuboid dimensions in meters, `(l1, l2, l3)` along the object axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cuboid {
    dims: [f64; 3],
}

impl Cuboid {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self, GeometryError> {
        let dims = [l1, l2, l3];
        for (index, &value) in dims.iter().enumerate() {
            if !(value > 0.0) {
                return Err(GeometryError::NonPositiveDimension { index, value });
            }
        }
        Ok(Cuboid { dims })
    }

    pub fn dims(&self) -> [f64; 3] {
        self.dims
    }

    /// The scale factor carried by the first dimension.
    pub fn scale(&self) -> f64 {
        self.dims[0]
    }

    /// Dimensions divided by `l1`, so the first entry is exactly 1.
    pub fn normalized_dims(&self) -> [f64; 3] {
        [1.0, self.dims[1] / self.dims[0], self.dims[2] / self.dims[0]]
    }
}

/// A point on the unit image plane; the third component is exactly 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitPlanePoint(Vector3<f64>);

impl UnitPlanePoint {
    pub fn from_xy(x: f64, y: f64) -> Self {
        UnitPlanePoint(Vector3::new(x, y, 1.0))
    }

    pub fn x(&self) -> f64 {
        self.0.x
    }

    pub fn y(&self) -> f64 {
        self.0.y
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.0
    }
}

/// The eight cuboid vertices in the object frame, in the crate-wide order.
///
/// Vertex `i` carries the signs `((-1)^b2 l1/2, (-1)^b1 l2/2, (-1)^b0 l3/2)`
/// where `b2 b1 b0` is the binary expansion of `i`: all-positive first, then
/// the sign of `z` flips fastest and the sign of `x` slowest. Every consumer
/// of vertex-ordered data (detections, solvers, logs) relies on this order.
pub fn cuboid_vertices(c: &Cuboid) -> [Vector3<f64>; 8] {
    let [l1, l2, l3] = c.dims();
    let mut out = [Vector3::zeros(); 8];
    for (i, v) in out.iter_mut().enumerate() {
        let sx = if i & 0b100 == 0 { 0.5 } else { -0.5 };
        let sy = if i & 0b010 == 0 { 0.5 } else { -0.5 };
        let sz = if i & 0b001 == 0 { 0.5 } else { -0.5 };
        *v = Vector3::new(sx * l1, sy * l2, sz * l3);
    }
    out
}

/// Converts a pixel coordinate to a unit-plane point.
pub fn pixel_to_unit_plane(mx: f64, my: f64, k: &CameraIntrinsics) -> UnitPlanePoint {
    UnitPlanePoint::from_xy((mx - k.cx) / k.fx, (my - k.cy) / k.fy)
}

/// Inverse of [`pixel_to_unit_plane`].
pub fn unit_plane_to_pixel(q: &UnitPlanePoint, k: &CameraIntrinsics) -> (f64, f64) {
    (q.x() * k.fx + k.cx, q.y() * k.fy + k.cy)
}

/// Perspective projection of a camera-frame point onto the unit plane.
///
/// Fails with [`GeometryError::NonPositiveDepth`] when the point is on or
/// behind the camera plane.
pub fn project_point(p_c: &Vector3<f64>) -> Result<UnitPlanePoint, GeometryError> {
    let depth = p_c.z;
    if depth <= 0.0 {
        return Err(GeometryError::NonPositiveDepth {
            element: BoxElement::Point,
            depth,
        });
    }
    Ok(UnitPlanePoint::from_xy(p_c.x / depth, p_c.y / depth))
}

/// A projected cuboid: the eight vertices and the center on the unit plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CuboidProjection {
    pub vertices: [UnitPlanePoint; 8],
    pub center: UnitPlanePoint,
}

/// Projects a cuboid through an object-to-camera pose.
///
/// The error reports which vertex (or the center) fell behind the camera.
pub fn project_cuboid(pose_oc: &Pose, c: &Cuboid) -> Result<CuboidProjection, GeometryError> {
    assert_eq!(pose_oc.from, Frame::Object);
    assert_eq!(pose_oc.to, Frame::Camera);
    let mut vertices = [UnitPlanePoint::from_xy(0.0, 0.0); 8];
    for (i, v) in cuboid_vertices(c).iter().enumerate() {
        let p_c = pose_oc.transform(v);
        vertices[i] = project_point(&p_c).map_err(|_| GeometryError::NonPositiveDepth {
            element: BoxElement::Vertex(i),
            depth: p_c.z,
        })?;
    }
    let center_c = pose_oc.translation;
    let center = project_point(&center_c).map_err(|_| GeometryError::NonPositiveDepth {
        element: BoxElement::Center,
        depth: center_c.z,
    })?;
    Ok(CuboidProjection { vertices, center })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn random_rotation(rng: &mut ChaCha12Rng) -> Rotation {
        let n = StandardNormal;
        let axis = Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng));
        let angle: f64 = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI)
            .unwrap()
            .sample(rng);
        Rotation::from_axis_angle(axis, angle)
    }

    #[test]
    fn cuboid_vertices_order_and_values() {
        let c = Cuboid::new(2.0, 2.0, 2.0).unwrap();
        let v = cuboid_vertices(&c);
        assert_eq!(v[0], Vector3::new(1.0, 1.0, 1.0));
        assert_eq!(v[1], Vector3::new(1.0, 1.0, -1.0));
        assert_eq!(v[2], Vector3::new(1.0, -1.0, 1.0));
        assert_eq!(v[7], Vector3::new(-1.0, -1.0, -1.0));

        let car = Cuboid::new(0.28, 0.24, 0.14).unwrap();
        assert_eq!(cuboid_vertices(&car)[0], Vector3::new(0.14, 0.12, 0.07));
    }

    #[test]
    fn cuboid_vertices_symmetric_under_xy_swap_for_square_footprint() {
        let c = Cuboid::new(0.92, 0.92, 0.55).unwrap();
        let v = cuboid_vertices(&c);
        // Swapping x and y maps the vertex set onto itself.
        for p in &v {
            let swapped = Vector3::new(p.y, p.x, p.z);
            assert!(v.iter().any(|q| (q - swapped).norm() < 1e-15));
        }
    }

    #[test]
    fn cuboid_vertices_closed_under_sign_flips_and_zero_mean() {
        let c = Cuboid::new(1.3, 0.7, 0.2).unwrap();
        let v = cuboid_vertices(&c);
        let mean: Vector3<f64> = v.iter().sum::<Vector3<f64>>() / 8.0;
        assert!(mean.norm() < 1e-15);
        for p in &v {
            for flip in [
                Vector3::new(-p.x, p.y, p.z),
                Vector3::new(p.x, -p.y, p.z),
                Vector3::new(p.x, p.y, -p.z),
            ] {
                assert!(v.iter().any(|q| (q - flip).norm() < 1e-15));
            }
        }
    }

    #[test]
    fn cuboid_rejects_non_positive_dims() {
        assert!(matches!(
            Cuboid::new(1.0, 0.0, 1.0),
            Err(GeometryError::NonPositiveDimension { index: 1, .. })
        ));
        assert!(Cuboid::new(1.0, 1.0, -2.0).is_err());
    }

    #[test]
    fn pixel_conversions() {
        let k = CameraIntrinsics::default();
        let q = pixel_to_unit_plane(k.cx, k.cy, &k);
        assert_eq!(q.vector(), Vector3::new(0.0, 0.0, 1.0));
        let q = pixel_to_unit_plane(k.cx + k.fx, k.cy, &k);
        assert_eq!(q.vector(), Vector3::new(1.0, 0.0, 1.0));
        let q = pixel_to_unit_plane(640.0, 360.0, &k);
        assert_eq!(q.vector(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn pixel_round_trip() {
        let k = CameraIntrinsics::new(432.5, 567.1, 311.0, 255.5, 640, 512);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        for _ in 0..100 {
            let q = UnitPlanePoint::from_xy(u.sample(&mut rng), u.sample(&mut rng));
            let (px, py) = unit_plane_to_pixel(&q, &k);
            let back = pixel_to_unit_plane(px, py, &k);
            assert_abs_diff_eq!(back.x(), q.x(), epsilon = 1e-12);
            assert_abs_diff_eq!(back.y(), q.y(), epsilon = 1e-12);
        }
    }

    #[test]
    fn project_point_basics() {
        assert_eq!(
            project_point(&Vector3::new(0.0, 0.0, 5.0)).unwrap().vector(),
            Vector3::new(0.0, 0.0, 1.0)
        );
        assert_eq!(
            project_point(&Vector3::new(1.0, 2.0, 2.0)).unwrap().vector(),
            Vector3::new(0.5, 1.0, 1.0)
        );
        assert!(matches!(
            project_point(&Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn projection_annihilation_property() {
        // (I - q e3^T) p_c = 0 for the projected q.
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let u = Uniform::new(-5.0, 5.0).unwrap();
        let d = Uniform::new(0.5, 50.0).unwrap();
        for _ in 0..500 {
            let p = Vector3::new(u.sample(&mut rng), u.sample(&mut rng), d.sample(&mut rng));
            let q = project_point(&p).unwrap().vector();
            let residual = (Matrix3::identity() - q * E3.transpose()) * p;
            assert!(residual.norm() <= 1e-12 * p.norm(), "residual {residual:?}");
        }
    }

    #[test]
    fn project_cuboid_center_positions() {
        let c = Cuboid::new(2.0, 2.0, 2.0).unwrap();
        let pose = Pose::new(
            Rotation::identity(),
            Vector3::new(0.0, 0.0, 10.0),
            Frame::Object,
            Frame::Camera,
        );
        let proj = project_cuboid(&pose, &c).unwrap();
        assert_eq!(proj.center.vector(), Vector3::new(0.0, 0.0, 1.0));

        let pose = Pose::new(
            Rotation::identity(),
            Vector3::new(5.0, 0.0, 10.0),
            Frame::Object,
            Frame::Camera,
        );
        let proj = project_cuboid(&pose, &c).unwrap();
        assert_eq!(proj.center.vector(), Vector3::new(0.5, 0.0, 1.0));
    }

    #[test]
    fn project_cuboid_reports_failing_vertex() {
        let c = Cuboid::new(2.0, 2.0, 2.0).unwrap();
        // Center in front but the near face pokes behind the camera.
        let pose = Pose::new(
            Rotation::identity(),
            Vector3::new(0.0, 0.0, 0.5),
            Frame::Object,
            Frame::Camera,
        );
        match project_cuboid(&pose, &c) {
            Err(GeometryError::NonPositiveDepth {
                element: BoxElement::Vertex(i),
                ..
            }) => assert!(i < 8),
            other => panic!("expected vertex depth error, got {other:?}"),
        }
    }

    #[test]
    fn rotation_validation_and_orthonormalize() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..50 {
            let r = random_rotation(&mut rng);
            assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        }
        let skewed = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(skewed).is_err());
        let fixed = Rotation::orthonormalize(skewed);
        assert!(Rotation::from_matrix(*fixed.matrix()).is_ok());
        // Orthonormalizing an exact rotation is (nearly) the identity map.
        let r = random_rotation(&mut rng);
        let again = Rotation::orthonormalize(*r.matrix());
        assert!((again.matrix() - r.matrix()).abs().max() < 1e-12);
    }

    #[test]
    fn pose_compose_and_inverse() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let r = random_rotation(&mut rng);
        let pose = Pose::new(r, Vector3::new(1.0, -2.0, 3.0), Frame::Object, Frame::Camera);
        let p = Vector3::new(0.3, 0.4, 0.5);
        let there = pose.transform(&p);
        let back = pose.inverse().transform(&there);
        assert!((back - p).norm() < 1e-12);

        let r2 = random_rotation(&mut rng);
        let pose2 = Pose::new(r2, Vector3::new(0.0, 1.0, 0.0), Frame::Camera, Frame::World);
        let chained = pose2.compose(&pose);
        let direct = pose2.transform(&pose.transform(&p));
        assert!((chained.transform(&p) - direct).norm() < 1e-12);
    }
}
