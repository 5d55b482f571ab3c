//! Pure-rotation baseline: per-pulse mirror normals from a single beam and an
//! assumed fixed pivot point.
//!
//! The baseline assumes the mirror rotates about a known center C with no
//! translation. Reflecting the incident direction v at C onto the observed
//! dot X fixes the mirror normal in closed form: with v″ = (X − C)/‖X − C‖
//! the outgoing direction, n ∝ v″ − v satisfies (I − 2nnᵀ)v = v″ exactly.
//! The plane is then the one through C with that normal. Any actual mirror
//! translation (lever-arm offset of the reflection point from C) becomes
//! prediction error, which is what the joint estimator removes.

use nalgebra::{Point3, Vector2, Vector3};

use crate::camera::{project, Intrinsics};
use crate::geom::{
    line_plane_intersect, reflect_line, reflection_matrix, PlaneH, PluckerLine, RigidTransformMin,
};

use super::PoseError;

/// Closed-form mirror planes for a sequence of reflected dots of one beam,
/// under the fixed-pivot assumption.
///
/// `dots_w` are the reflected dot positions on the world plane. Each output
/// plane passes through `center` and is oriented against the beam direction.
pub fn baseline_pure_rotation(
    beam: &PluckerLine,
    center: &Point3<f64>,
    dots_w: &[Point3<f64>],
) -> Result<Vec<PlaneH>, PoseError> {
    let mut out = Vec::with_capacity(dots_w.len());
    for x in dots_w {
        let offset = x - center;
        let norm = offset.norm();
        if norm < 1e-9 {
            return Err(PoseError::Retroreflection { distance: norm });
        }
        let v_out = offset / norm;
        let n_raw: Vector3<f64> = v_out - beam.v;
        let n_norm = n_raw.norm();
        if n_norm < 1e-9 {
            // Outgoing direction equals the incident one: no mirror can do
            // that with a single reflection.
            return Err(PoseError::Retroreflection { distance: n_norm });
        }
        let n = n_raw / n_norm;
        out.push(PlaneH::from_point_normal(center, n)?.oriented_against(&beam.v));
    }
    Ok(out)
}

/// Predicts the reflected dot of another beam under a baseline plane:
/// reflect, intersect the world plane z = 0, project into camera 2.
pub fn baseline_predict_dot(
    plane: &PlaneH,
    beam: &PluckerLine,
    t_c2_w: &RigidTransformMin,
    k: &Intrinsics,
) -> Result<Vector2<f64>, PoseError> {
    let reflected = reflect_line(beam, &reflection_matrix(plane));
    let world_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let x = line_plane_intersect(&reflected, &world_plane)?;
    Ok(project(t_c2_w, k, &x)?)
}
