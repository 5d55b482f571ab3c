//! Rotation exponential/logarithm and the right Jacobian of SO(3).

use nalgebra::{Matrix3, Vector3};

use super::{GeomError, BRANCH_CUT_TOL};

/// Below this angle the trigonometric coefficients switch to their Taylor
/// series to avoid 0/0.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric cross-product matrix: skew(a) * b = a × b.
pub fn skew(a: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Rodrigues' formula: R = I + sinθ/θ [w]× + (1−cosθ)/θ² [w]×².
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (
            theta.sin() / theta,
            (1.0 - theta.cos()) / (theta * theta),
        )
    };
    Matrix3::identity() + a * wx + b * (wx * wx)
}

/// Principal-branch logarithm of a rotation matrix.
///
/// Errors with [`GeomError::NearBranchCut`] when the rotation angle is within
/// 1e-6 rad of pi, where the axis-angle parameterization is not unique.
pub fn rotation_log(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeomError> {
    let trace = r.trace();
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();

    if (std::f64::consts::PI - theta) < BRANCH_CUT_TOL {
        return Err(GeomError::NearBranchCut { angle_rad: theta });
    }

    // Antisymmetric part of R holds sinθ * axis.
    let axis_sin = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );

    if theta < SMALL_ANGLE {
        // sinθ/θ ≈ 1 − θ²/6; dividing by it keeps the O(θ³) term.
        let t2 = theta * theta;
        return Ok(axis_sin * (1.0 + t2 / 6.0));
    }

    Ok(axis_sin * (theta / theta.sin()))
}

/// Right Jacobian of SO(3): Exp(w + δ) ≈ Exp(w) · Exp(J_r(w) δ).
///
/// ```text
/// J_r(w) = I − (1−cosθ)/θ² [w]× + (θ−sinθ)/θ³ [w]×²
/// ```
///
/// Used to differentiate rotated vectors through the axis-angle chart:
/// ∂(Exp(w) u)/∂w = −Exp(w) [u]× J_r(w) and ∂(Exp(w)ᵀ a)/∂w = [Exp(w)ᵀ a]× J_r(w).
pub fn so3_right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let wx = skew(w);
    let (b, c) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        (
            (1.0 - theta.cos()) / t2,
            (theta - theta.sin()) / (t2 * theta),
        )
    };
    Matrix3::identity() - b * wx + c * (wx * wx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_axis_angle(rng: &mut ChaCha8Rng, max_angle: f64) -> Vector3<f64> {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        axis * rng.gen_range(0.0..max_angle)
    }

    #[test]
    fn exp_of_zero_is_identity() {
        let r = rotation_exp(&Vector3::zeros());
        assert_abs_diff_eq!(r, Matrix3::identity(), epsilon = 1e-15);
    }

    #[test]
    fn log_of_identity_is_zero() {
        let w = rotation_log(&Matrix3::identity()).unwrap();
        assert_abs_diff_eq!(w, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn exp_log_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let w = random_axis_angle(&mut rng, 3.1);
            let back = rotation_log(&rotation_exp(&w)).unwrap();
            max_err = max_err.max((back - w).norm());
        }
        assert!(max_err < 1e-9, "round-trip error {max_err:.2e} exceeds 1e-9");
    }

    #[test]
    fn exp_is_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let r = rotation_exp(&random_axis_angle(&mut rng, 3.0));
            assert_abs_diff_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
            assert_abs_diff_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn log_near_pi_is_rejected() {
        let w = Vector3::new(std::f64::consts::PI - 1e-9, 0.0, 0.0);
        let err = rotation_log(&rotation_exp(&w)).unwrap_err();
        assert!(matches!(err, GeomError::NearBranchCut { .. }), "got {err:?}");
    }

    #[test]
    fn small_angle_round_trip() {
        for scale in [1e-12, 1e-9, 1e-7, 1e-5] {
            let w = Vector3::new(scale, -0.5 * scale, 0.25 * scale);
            let back = rotation_log(&rotation_exp(&w)).unwrap();
            assert!((back - w).norm() <= 1e-12 * w.norm().max(1e-15));
        }
    }

    #[test]
    fn right_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..100 {
            let w = random_axis_angle(&mut rng, 2.5);
            let jr = so3_right_jacobian(&w);
            // Exp(w+δ) ≈ Exp(w) Exp(J_r δ)  ⇒  Log(Exp(w)ᵀ Exp(w+δ)) ≈ J_r δ.
            let h = 1e-6;
            for k in 0..3 {
                let mut dw = Vector3::zeros();
                dw[k] = h;
                let lhs = rotation_log(
                    &(rotation_exp(&w).transpose() * rotation_exp(&(w + dw))),
                )
                .unwrap();
                let pred = jr.column(k) * h;
                assert!(
                    (lhs - pred).norm() < 1e-9,
                    "column {k}: fd {lhs:?} vs analytic {pred:?}"
                );
            }
        }
    }
}
