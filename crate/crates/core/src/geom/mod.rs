//! Homogeneous points and planes, Plücker lines, reflections, rigid
//! transforms, and the minimal parameterizations used by the optimizer.
//!
//! # Conventions
//!
//! - A plane is (n, d) with unit normal n; a point X lies on it iff
//!   nᵀX + d = 0. Homogeneously, πᵀ[X̃; 1] = 0 with π = [nᵀ d]ᵀ.
//! - A Plücker line is (v, m) with unit direction v and moment m = v × p
//!   for any point p on the line; points on the line satisfy v × X − m = 0
//!   and the Plücker constraint is vᵀm = 0.
//! - Axis-angle vectors w encode the rotation Exp(w) by Rodrigues' formula;
//!   Log is restricted to the principal branch ‖w‖ < π.
//!
//! All operations are pure functions on immutable values and are safe for
//! unrestricted parallel use.

mod line;
mod plane;
mod so3;
mod transform;

pub use line::{
    closest_points, line_plane_intersect, line_plane_intersect_partials, reflect_line,
    reflect_line_partials, IntersectPartials, LineMin, PluckerLine, ReflectPartials,
};
pub use plane::{reflect_point, reflection_matrix, PlaneH, PlaneMin, ReflectionH};
pub use so3::{rotation_exp, rotation_log, skew, so3_right_jacobian};
pub use transform::RigidTransformMin;

use nalgebra::{Point3, Vector3, Vector4};

/// Angle within this distance of pi is rejected by Log maps.
pub const BRANCH_CUT_TOL: f64 = 1e-6;

/// |vᵀn| below this means the line is parallel to the plane.
pub const PARALLEL_TOL: f64 = 1e-9;

/// Errors from geometric constructions and minimal-parameterization maps.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeomError {
    /// A rotation angle is within [`BRANCH_CUT_TOL`] of the Log branch cut at pi.
    #[error("rotation angle {angle_rad} rad is within 1e-6 of the branch cut at pi")]
    NearBranchCut { angle_rad: f64 },
    /// Line direction is perpendicular to the plane normal.
    #[error("line is parallel to the plane (|v.n| = {v_dot_n:.3e} < 1e-9)")]
    ParallelLinePlane { v_dot_n: f64 },
    /// A line through the origin has zero moment and no minimal form.
    #[error("degenerate line: moment norm {moment_norm:.3e} is too small")]
    DegenerateLine { moment_norm: f64 },
    /// A plane or direction was constructed from a (near-)zero vector.
    #[error("zero-length vector where a direction was required (norm {norm:.3e})")]
    ZeroVector { norm: f64 },
}

/// Lifts a point to homogeneous coordinates with w = 1.
pub fn to_homogeneous(p: &Point3<f64>) -> Vector4<f64> {
    Vector4::new(p.x, p.y, p.z, 1.0)
}

/// Drops homogeneous coordinates, dividing by w.
///
/// Returns `None` when |w| is too small for a finite point.
pub fn dehomogenize(x: &Vector4<f64>) -> Option<Point3<f64>> {
    if x.w.abs() < 1e-300 {
        return None;
    }
    Some(Point3::new(x.x / x.w, x.y / x.w, x.z / x.w))
}

/// Normalizes a vector, erroring on (near-)zero input.
pub(crate) fn unitize(v: Vector3<f64>) -> Result<Vector3<f64>, GeomError> {
    let norm = v.norm();
    if norm < 1e-12 {
        return Err(GeomError::ZeroVector { norm });
    }
    Ok(v / norm)
}
