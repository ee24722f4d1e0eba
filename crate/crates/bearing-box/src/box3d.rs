//! From a 3D-box detection to the normalized relative position and the
//! world-frame pseudo-measurement.
//!
//! A detection carries no absolute scale: dimensions are normalized so the
//! first one is 1, and the vertices live on the unit image plane. What *can*
//! be recovered from a single frame is the camera-frame position divided by
//! the unknown scale, `p_o^c / alpha`. [`normalized_rel_pos`] solves the
//! stacked projection constraints for exactly that quantity;
//! [`to_world`] rotates it into the world frame where the filters consume it.

use crate::geometry::{cuboid_vertices, Cuboid, CuboidProjection, Rotation, UnitPlanePoint, E3};
use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use std::fmt;

/// Relative singular-value threshold (on the Gram matrix of the stacked
/// system) below which a detection is reported as degenerate.
pub const SINGULAR_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub enum Box3dError {
    /// The stacked vertex constraints are (numerically) collinear.
    SingularSystem { sigma_min: f64, sigma_max: f64 },
    /// Normalized dimensions must start with 1 and stay positive.
    InvalidNormalizedDims { dims: [f64; 3] },
}

impl fmt::Display for Box3dError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Box3dError::SingularSystem {
                sigma_min,
                sigma_max,
            } => write!(
                f,
                "degenerate detection: singular values {sigma_min:.3e} / {sigma_max:.3e}"
            ),
            Box3dError::InvalidNormalizedDims { dims } => {
                write!(f, "invalid normalized dimensions {dims:?}")
            }
        }
    }
}

impl std::error::Error for Box3dError {}

/// One frame's 3D detection: rotation, normalized dimensions, projected
/// vertices (in the crate-wide vertex order) and projected center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3DDetection {
    pub r_oc: Rotation,
    ldims: [f64; 3],
    pub vertices: [UnitPlanePoint; 8],
    pub center: UnitPlanePoint,
}

impl Box3DDetection {
    pub fn new(
        r_oc: Rotation,
        lbar2: f64,
        lbar3: f64,
        vertices: [UnitPlanePoint; 8],
        center: UnitPlanePoint,
    ) -> Result<Self, Box3dError> {
        if !(lbar2 > 0.0) || !(lbar3 > 0.0) {
            return Err(Box3dError::InvalidNormalizedDims {
                dims: [1.0, lbar2, lbar3],
            });
        }
        Ok(Self {
            r_oc,
            ldims: [1.0, lbar2, lbar3],
            vertices,
            center,
        })
    }

    /// Builds the exact detection for a cuboid projection.
    pub fn from_projection(r_oc: Rotation, cuboid: &Cuboid, proj: &CuboidProjection) -> Self {
        let nd = cuboid.normalized_dims();
        Self {
            r_oc,
            ldims: nd,
            vertices: proj.vertices,
            center: proj.center,
        }
    }

    /// Normalized dimensions `(1, l2/l1, l3/l1)`.
    pub fn ldims(&self) -> [f64; 3] {
        self.ldims
    }

    /// The normalized object-frame vertices implied by the dimensions.
    pub fn normalized_vertices(&self) -> [Vector3<f64>; 8] {
        // Unit-scale cuboid with the normalized dimensions; always valid.
        let c = Cuboid::new(self.ldims[0], self.ldims[1], self.ldims[2])
            .expect("normalized dims validated on construction");
        cuboid_vertices(&c)
    }
}

/// `p_o^c / alpha` recovered from one detection, with the least-squares
/// residual of the stacked system at the solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedRelPos {
    pub p_bar_oc: Vector3<f64>,
    pub residual: f64,
}

/// The world-frame pseudo-measurement `R_c^w * p_bar_o^c` at a timestamp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPseudoMeasurement {
    pub t_bar_oc_w: Vector3<f64>,
    pub timestamp: f64,
}

/// Recovers the normalized relative position from a single detection.
///
/// Each vertex contributes the constraint `Q_i p_bar = -Q_i R p_bar_i^o`
/// with `Q_i = I - q_i e3^T`; the 24x3 stack is solved by SVD least squares,
/// which matches the normal-equation closed form on clean inputs but keeps
/// its conditioning on noisy ones. A detection whose vertices are collinear
/// (impossible for a genuine cuboid projection, so this flags corrupted
/// input) yields [`Box3dError::SingularSystem`].
pub fn normalized_rel_pos(d: &Box3DDetection) -> Result<NormalizedRelPos, Box3dError> {
    let mut a = SMatrix::<f64, 24, 3>::zeros();
    let mut b = SVector::<f64, 24>::zeros();
    let r = d.r_oc.matrix();
    for (i, (q, p_bar_o)) in d.vertices.iter().zip(d.normalized_vertices()).enumerate() {
        let q_i = Matrix3::identity() - q.vector() * E3.transpose();
        a.fixed_view_mut::<3, 3>(3 * i, 0).copy_from(&q_i);
        b.fixed_view_mut::<3, 1>(3 * i, 0)
            .copy_from(&(-q_i * r * p_bar_o));
    }

    let svd = a.svd(true, true);
    let sigma_max = svd.singular_values[0];
    let sigma_min = svd.singular_values[2];
    // The spec'd tolerance is on sum(Q_i^T Q_i), whose singular values are
    // the squares of the stacked system's.
    if sigma_min * sigma_min < SINGULAR_TOL * sigma_max * sigma_max {
        return Err(Box3dError::SingularSystem {
            sigma_min: sigma_min * sigma_min,
            sigma_max: sigma_max * sigma_max,
        });
    }
    let p_bar_oc = svd.solve(&b, 0.0).expect("svd vectors requested");
    let residual = (a * p_bar_oc - b).norm();
    Ok(NormalizedRelPos {
        p_bar_oc,
        residual,
    })
}

/// Rotates a normalized relative position into the world frame.
pub fn to_world(n: &NormalizedRelPos, r_cw: &Rotation, timestamp: f64) -> WorldPseudoMeasurement {
    WorldPseudoMeasurement {
        t_bar_oc_w: r_cw.apply(&n.p_bar_oc),
        timestamp,
    }
}

/// Thrust direction of a multicopter from its world-frame attitude.
///
/// `h = -R_o^w e3`: the body `z` axis points along gravity at hover, so the
/// thrust points straight up (`-e3` in the gravity-down world frame).
pub fn thrust_direction(r_ow: &Rotation) -> Vector3<f64> {
    (-r_ow.apply(&E3)).normalize()
}
