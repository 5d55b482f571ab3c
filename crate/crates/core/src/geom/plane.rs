//! Homogeneous planes, their minimal parameterization, and reflections.

use nalgebra::{Matrix3, Matrix4, Point3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{unitize, GeomError};

/// A plane in homogeneous form: points X with nᵀX + d = 0.
///
/// The normal is unit length; d is in millimetres (negated signed distance of
/// the origin from the plane along n). The orientation of n is meaningful
/// where the pipeline fixes it (mirror normals face the beam source);
/// otherwise [`PlaneH::canonicalized`] makes the first nonzero component of n
/// positive so estimates compare across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneH {
    /// Unit normal (dimensionless).
    pub n: Vector3<f64>,
    /// Offset (mm); the plane equation is nᵀX + d = 0.
    pub d: f64,
}

impl PlaneH {
    /// Builds a plane from a (not necessarily unit) normal and offset,
    /// rescaling so that ‖n‖ = 1.
    pub fn new(n: Vector3<f64>, d: f64) -> Result<Self, GeomError> {
        let norm = n.norm();
        if norm < 1e-12 {
            return Err(GeomError::ZeroVector { norm });
        }
        Ok(Self { n: n / norm, d: d / norm })
    }

    /// Plane through a point with the given normal direction.
    pub fn from_point_normal(p: &Point3<f64>, n: Vector3<f64>) -> Result<Self, GeomError> {
        let n = unitize(n)?;
        Ok(Self { n, d: -n.dot(&p.coords) })
    }

    /// Signed distance of a point from the plane (mm): nᵀX + d.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.n.dot(&p.coords) + self.d
    }

    /// Homogeneous 4-vector π = [nᵀ d]ᵀ.
    pub fn homogeneous(&self) -> Vector4<f64> {
        Vector4::new(self.n.x, self.n.y, self.n.z, self.d)
    }

    /// Rebuilds from a homogeneous 4-vector, rescaling to a unit normal.
    pub fn from_homogeneous(pi: &Vector4<f64>) -> Result<Self, GeomError> {
        Self::new(pi.xyz(), pi.w)
    }

    /// Flips orientation so the first nonzero component of n is positive.
    pub fn canonicalized(&self) -> Self {
        for k in 0..3 {
            if self.n[k].abs() > 1e-12 {
                return if self.n[k] < 0.0 { self.flipped() } else { *self };
            }
        }
        *self
    }

    /// Same plane with opposite orientation.
    pub fn flipped(&self) -> Self {
        Self { n: -self.n, d: -self.d }
    }

    /// Orients the normal against a reference direction (nᵀdir < 0), used for
    /// mirror planes that must face the incoming beam.
    pub fn oriented_against(&self, dir: &Vector3<f64>) -> Self {
        if self.n.dot(dir) > 0.0 {
            self.flipped()
        } else {
            *self
        }
    }
}

/// Minimal 3-parameter plane chart: the quaternion-log of the normalized
/// homogeneous plane vector.
///
/// Writing the unit 4-vector π/‖π‖ = [n sin(θ/2)... as the quaternion with
/// vector part n/√(1+d²) and scalar part d/√(1+d²), the log map gives
/// p = n·θ with θ = 2·atan2(1, d) ∈ (0, 2π). The inverse recovers n = p/θ
/// and d = cos(θ/2)/sin(θ/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneMin {
    /// Chart coordinates (rad-scaled); ‖p‖ = 2·atan2(1, d).
    pub p: Vector3<f64>,
}

impl PlaneMin {
    /// Chart coordinates of a plane.
    pub fn from_plane(plane: &PlaneH) -> Self {
        let theta = 2.0 * 1.0_f64.atan2(plane.d);
        Self { p: plane.n * theta }
    }

    /// Recovers the plane; errors if the chart point collapses to zero
    /// (plane at infinity).
    pub fn to_plane(&self) -> Result<PlaneH, GeomError> {
        let theta = self.p.norm();
        if theta < 1e-12 {
            return Err(GeomError::ZeroVector { norm: theta });
        }
        let half = 0.5 * theta;
        let sin_half = half.sin();
        if sin_half.abs() < 1e-12 {
            return Err(GeomError::ZeroVector { norm: sin_half.abs() });
        }
        Ok(PlaneH { n: self.p / theta, d: half.cos() / sin_half })
    }

    /// Jacobians of (n, d) with respect to the chart coordinates p.
    ///
    /// ```text
    /// n = p/θ            ⇒  ∂n/∂p = (I − n nᵀ)/θ
    /// d = cot(θ/2)       ⇒  ∂d/∂p = −nᵀ / (2 sin²(θ/2))
    /// ```
    pub fn jacobian(&self) -> (Matrix3<f64>, Vector3<f64>) {
        let theta = self.p.norm();
        let n = self.p / theta;
        let dn_dp = (Matrix3::identity() - n * n.transpose()) / theta;
        let sin_half = (0.5 * theta).sin();
        let dd_dp = -n / (2.0 * sin_half * sin_half);
        (dn_dp, dd_dp)
    }
}

/// Homogeneous 4×4 reflection across a plane.
///
/// ```text
/// H = [ I − 2nnᵀ   −2dn ]
///     [    0         1  ]
/// ```
///
/// H is an involution (H·H = I) and its upper-left 3×3 block has
/// determinant −1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionH {
    /// The homogeneous matrix.
    pub h: Matrix4<f64>,
}

impl ReflectionH {
    /// Upper-left 3×3 block: the Householder reflector I − 2nnᵀ.
    pub fn linear(&self) -> Matrix3<f64> {
        self.h.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Upper-right 3×1 block: −2dn.
    pub fn translation(&self) -> Vector3<f64> {
        self.h.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Applies the reflection to a finite point.
    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.linear() * p.coords + self.translation())
    }
}

/// Mirror image of a point: X′ = X − 2(nᵀX + d)n.
pub fn reflect_point(plane: &PlaneH, p: &Point3<f64>) -> Point3<f64> {
    p - 2.0 * plane.signed_distance(p) * plane.n
}

/// Homogeneous reflection matrix for a plane.
pub fn reflection_matrix(plane: &PlaneH) -> ReflectionH {
    let s = Matrix3::identity() - 2.0 * plane.n * plane.n.transpose();
    let t = -2.0 * plane.d * plane.n;
    let mut h = Matrix4::identity();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(&s);
    h.fixed_view_mut::<3, 1>(0, 3).copy_from(&t);
    ReflectionH { h }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_plane(rng: &mut ChaCha8Rng) -> PlaneH {
        let n = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        PlaneH::new(n + Vector3::new(1.5, 0.0, 0.0), rng.gen_range(-300.0..300.0)).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Point3<f64> {
        Point3::new(
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
        )
    }

    #[test]
    fn point_on_plane_is_fixed() {
        let plane = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let p = Point3::new(1.0, 2.0, 0.0);
        assert_abs_diff_eq!(reflect_point(&plane, &p), p, epsilon = 1e-15);
    }

    #[test]
    fn reflect_across_z0() {
        let plane = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let r = reflect_point(&plane, &Point3::new(0.0, 0.0, 1.0));
        assert_abs_diff_eq!(r, Point3::new(0.0, 0.0, -1.0), epsilon = 1e-15);
    }

    #[test]
    fn reflect_across_z5() {
        // n=[0,0,1], d=−5 is the plane z = 5.
        let plane = PlaneH::new(Vector3::z(), -5.0).unwrap();
        let r = reflect_point(&plane, &Point3::new(0.0, 0.0, 7.0));
        assert_abs_diff_eq!(r, Point3::new(0.0, 0.0, 3.0), epsilon = 1e-15);
    }

    #[test]
    fn midpoint_lies_on_plane() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let plane = random_plane(&mut rng);
            let p = random_point(&mut rng);
            let q = reflect_point(&plane, &p);
            let mid = Point3::from(0.5 * (p.coords + q.coords));
            assert!(plane.signed_distance(&mid).abs() < 1e-10);
        }
    }

    #[test]
    fn reflection_matrix_z_flip() {
        let plane = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let h = reflection_matrix(&plane).h;
        let expected = Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, -1.0, 1.0));
        assert_abs_diff_eq!(h, expected, epsilon = 1e-15);
    }

    #[test]
    fn reflection_matrix_is_involution() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let h = reflection_matrix(&random_plane(&mut rng)).h;
            assert_abs_diff_eq!(h * h, Matrix4::identity(), epsilon = 1e-10);
        }
    }

    #[test]
    fn reflection_matrix_linear_det_is_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let h = reflection_matrix(&random_plane(&mut rng));
            assert_abs_diff_eq!(h.linear().determinant(), -1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn matrix_and_pointwise_reflection_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..500 {
            let plane = random_plane(&mut rng);
            let p = random_point(&mut rng);
            let h = reflection_matrix(&plane);
            assert_abs_diff_eq!(h.apply_point(&p), reflect_point(&plane, &p), epsilon = 1e-12);
        }
    }

    #[test]
    fn plane_min_round_trip_axis_aligned() {
        let plane = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let back = PlaneMin::from_plane(&plane).to_plane().unwrap();
        assert_abs_diff_eq!(back.n, plane.n, epsilon = 1e-12);
        assert_abs_diff_eq!(back.d, plane.d, epsilon = 1e-12);
    }

    #[test]
    fn plane_min_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let plane = random_plane(&mut rng);
            let back = PlaneMin::from_plane(&plane).to_plane().unwrap();
            max_err = max_err
                .max((back.n - plane.n).norm())
                .max((back.d - plane.d).abs() / plane.d.abs().max(1.0));
        }
        assert!(max_err < 1e-9, "round-trip error {max_err:.2e}");
    }

    #[test]
    fn plane_min_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..200 {
            let plane = random_plane(&mut rng);
            let pm = PlaneMin::from_plane(&plane);
            let (dn_dp, dd_dp) = pm.jacobian();
            let h = 1e-7;
            for k in 0..3 {
                let mut dp = Vector3::zeros();
                dp[k] = h;
                let plus = PlaneMin { p: pm.p + dp }.to_plane().unwrap();
                let minus = PlaneMin { p: pm.p - dp }.to_plane().unwrap();
                let fd_n = (plus.n - minus.n) / (2.0 * h);
                let fd_d = (plus.d - minus.d) / (2.0 * h);
                assert!((fd_n - dn_dp.column(k)).norm() < 1e-5 * (1.0 + fd_n.norm()));
                assert!((fd_d - dd_dp[k]).abs() < 1e-5 * (1.0 + fd_d.abs()));
            }
        }
    }

    #[test]
    fn canonical_sign_flips_negative_leading_normal() {
        let plane = PlaneH::new(Vector3::new(-1.0, 0.5, 0.2), 10.0).unwrap();
        let canon = plane.canonicalized();
        assert!(canon.n.x > 0.0);
        // Same geometric plane: every point satisfying one equation satisfies the other.
        let p = Point3::new(3.0, -2.0, (-canon.d - canon.n.x * 3.0 + canon.n.y * 2.0) / canon.n.z);
        assert!(plane.signed_distance(&p).abs() < 1e-9);
    }
}
