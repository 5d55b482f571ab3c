//! Plücker lines, their minimal parameterization, and line/plane and
//! line/reflection operations with analytic partial derivatives.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::plane::{PlaneH, ReflectionH};
use super::so3::{rotation_exp, rotation_log, skew};
use super::{unitize, GeomError, PARALLEL_TOL};

/// A line in Plücker coordinates: unit direction v and moment m = v × p for
/// any point p on the line.
///
/// Points X on the line satisfy v × X − m = 0, and vᵀm = 0 (Plücker
/// constraint). For laser beams the sign of v is canonical: it points in the
/// propagation direction, source → mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluckerLine {
    /// Unit direction (dimensionless).
    pub v: Vector3<f64>,
    /// Moment (mm); vᵀm = 0.
    pub m: Vector3<f64>,
}

impl PluckerLine {
    /// Builds a line from raw coordinates, normalizing v and projecting m
    /// onto the Plücker constraint vᵀm = 0.
    pub fn new(v: Vector3<f64>, m: Vector3<f64>) -> Result<Self, GeomError> {
        let v = unitize(v)?;
        let m = m - v.dot(&m) * v;
        Ok(Self { v, m })
    }

    /// Line through a point with the given direction.
    pub fn from_point_dir(p: &Point3<f64>, dir: Vector3<f64>) -> Result<Self, GeomError> {
        let v = unitize(dir)?;
        Ok(Self { v, m: v.cross(&p.coords) })
    }

    /// Line through two points, directed from `a` to `b`.
    pub fn through_points(a: &Point3<f64>, b: &Point3<f64>) -> Result<Self, GeomError> {
        Self::from_point_dir(a, b - a)
    }

    /// The point on the line closest to the origin.
    pub fn closest_point_to_origin(&self) -> Point3<f64> {
        Point3::from(self.m.cross(&self.v))
    }

    /// Euclidean distance from a point to the line (mm).
    pub fn distance_to_point(&self, p: &Point3<f64>) -> f64 {
        (self.v.cross(&p.coords) - self.m).norm()
    }

    /// Point at signed arclength s from the closest-to-origin point.
    pub fn point_at(&self, s: f64) -> Point3<f64> {
        self.closest_point_to_origin() + s * self.v
    }

    /// Residual of the point-on-line constraint, v × X − m.
    pub fn residual(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.v.cross(&p.coords) - self.m
    }
}

/// Minimal 4-parameter line chart (Bartoli): axis-angle of the orthonormal
/// frame R_L = [v  m/‖m‖  v×m/‖m‖] plus the moment magnitude.
///
/// Lines through the origin (‖m‖ = 0) have no chart point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineMin {
    /// Axis-angle of R_L (rad).
    pub w_l: Vector3<f64>,
    /// Moment magnitude (mm, > 0).
    pub m: f64,
}

impl LineMin {
    /// Chart coordinates of a line.
    ///
    /// Errors with [`GeomError::DegenerateLine`] for lines through the origin
    /// and [`GeomError::NearBranchCut`] when R_L lands on the Log branch cut.
    pub fn from_line(line: &PluckerLine) -> Result<Self, GeomError> {
        let m_norm = line.m.norm();
        if m_norm < 1e-9 {
            return Err(GeomError::DegenerateLine { moment_norm: m_norm });
        }
        let m_hat = line.m / m_norm;
        let r_l = Matrix3::from_columns(&[line.v, m_hat, line.v.cross(&m_hat)]);
        Ok(Self { w_l: rotation_log(&r_l)?, m: m_norm })
    }

    /// Recovers the line from its chart coordinates.
    pub fn to_line(&self) -> PluckerLine {
        let r_l = rotation_exp(&self.w_l);
        PluckerLine {
            v: r_l.column(0).into_owned(),
            m: self.m * r_l.column(1).into_owned(),
        }
    }

    /// Jacobians of (v, m) with respect to (w_l, m): 3×3 blocks for
    /// ∂v/∂w_l and ∂m/∂w_l plus the 3-vector ∂m/∂m_scalar.
    pub fn jacobian(&self) -> (Matrix3<f64>, Matrix3<f64>, Vector3<f64>) {
        let r_l = rotation_exp(&self.w_l);
        let jr = super::so3::so3_right_jacobian(&self.w_l);
        let e1 = Vector3::x();
        let e2 = Vector3::y();
        let dv_dw = -r_l * skew(&e1) * jr;
        let dm_dw = -self.m * r_l * skew(&e2) * jr;
        let dm_dmag = r_l.column(1).into_owned();
        (dv_dw, dm_dw, dm_dmag)
    }
}

/// Intersection of a line with a plane, via the stacked least-squares system
/// of the point-on-line and point-on-plane constraints.
///
/// ```text
/// [ [v]× ] X = [  m ]        normal equations:
/// [  nᵀ  ]     [ −d ]        (I − vvᵀ + nnᵀ) X = m×v − d·n
/// ```
///
/// The system is consistent whenever the line meets the plane, so the
/// least-squares solution is the exact intersection point.
pub fn line_plane_intersect(line: &PluckerLine, plane: &PlaneH) -> Result<Point3<f64>, GeomError> {
    let v_dot_n = line.v.dot(&plane.n);
    if v_dot_n.abs() < PARALLEL_TOL {
        return Err(GeomError::ParallelLinePlane { v_dot_n });
    }
    let a = Matrix3::identity() - line.v * line.v.transpose() + plane.n * plane.n.transpose();
    let b = line.m.cross(&line.v) - plane.d * plane.n;
    let x = a.try_inverse().ok_or(GeomError::ParallelLinePlane { v_dot_n })? * b;
    Ok(Point3::from(x))
}

/// Partial derivatives of [`line_plane_intersect`] with respect to the line
/// and plane coordinates.
#[derive(Debug, Clone, Copy)]
pub struct IntersectPartials {
    /// ∂X/∂v.
    pub dx_dv: Matrix3<f64>,
    /// ∂X/∂m.
    pub dx_dm: Matrix3<f64>,
    /// ∂X/∂n.
    pub dx_dn: Matrix3<f64>,
    /// ∂X/∂d.
    pub dx_dd: Vector3<f64>,
}

/// Intersection point together with its partials.
///
/// Differentiating (I − vvᵀ + nnᵀ) X = m×v − d·n in place:
///
/// ```text
/// ∂X/∂v = A⁻¹ ([m]× + (vᵀX) I + v Xᵀ)
/// ∂X/∂m = −A⁻¹ [v]×
/// ∂X/∂n = A⁻¹ (−d I − (nᵀX) I − n Xᵀ)
/// ∂X/∂d = −A⁻¹ n
/// ```
pub fn line_plane_intersect_partials(
    line: &PluckerLine,
    plane: &PlaneH,
) -> Result<(Point3<f64>, IntersectPartials), GeomError> {
    let v_dot_n = line.v.dot(&plane.n);
    if v_dot_n.abs() < PARALLEL_TOL {
        return Err(GeomError::ParallelLinePlane { v_dot_n });
    }
    let a = Matrix3::identity() - line.v * line.v.transpose() + plane.n * plane.n.transpose();
    let a_inv = a.try_inverse().ok_or(GeomError::ParallelLinePlane { v_dot_n })?;
    let b = line.m.cross(&line.v) - plane.d * plane.n;
    let x = a_inv * b;

    let ident = Matrix3::identity();
    let dx_dv = a_inv * (skew(&line.m) + line.v.dot(&x) * ident + line.v * x.transpose());
    let dx_dm = -a_inv * skew(&line.v);
    let dx_dn = a_inv * (-plane.d * ident - plane.n.dot(&x) * ident - plane.n * x.transpose());
    let dx_dd = -a_inv * plane.n;

    Ok((Point3::from(x), IntersectPartials { dx_dv, dx_dm, dx_dn, dx_dd }))
}

/// Mirror image of a line across a reflection.
///
/// The direction follows the physical reflected-ray convention
/// v′ = (I − 2nnᵀ) v, so an incident beam's image propagates away from the
/// mirror.
pub fn reflect_line(line: &PluckerLine, h: &ReflectionH) -> PluckerLine {
    let s = h.linear();
    let v_r = s * line.v;
    let p_r = s * line.closest_point_to_origin().coords + h.translation();
    PluckerLine { v: v_r, m: v_r.cross(&p_r) }
}

/// Partial derivatives of the reflected line with respect to the incident
/// line (v, m) and the mirror plane (n, d).
#[derive(Debug, Clone, Copy)]
pub struct ReflectPartials {
    /// ∂v′/∂v = I − 2nnᵀ.
    pub dvr_dv: Matrix3<f64>,
    /// ∂v′/∂n.
    pub dvr_dn: Matrix3<f64>,
    /// ∂m′/∂v.
    pub dmr_dv: Matrix3<f64>,
    /// ∂m′/∂m.
    pub dmr_dm: Matrix3<f64>,
    /// ∂m′/∂n.
    pub dmr_dn: Matrix3<f64>,
    /// ∂m′/∂d.
    pub dmr_dd: Vector3<f64>,
}

/// Reflected line together with its partials.
///
/// With S = I − 2nnᵀ, p₀ = m×v (closest point to origin), the reflected line
/// is v′ = S v, p′ = S p₀ − 2d n, m′ = v′ × p′. Product-rule chains:
///
/// ```text
/// ∂v′/∂n  = −2((nᵀv) I + n vᵀ)
/// ∂m′/∂v  = −[p′]× S + [v′]× S [m]×
/// ∂m′/∂m  = −[v′]× S [v]×
/// ∂m′/∂n  = [p′]× · 2((nᵀv) I + n vᵀ) − 2 [v′]× ((nᵀp₀ + d) I + n p₀ᵀ)
/// ∂m′/∂d  = −2 v′ × n
/// ```
pub fn reflect_line_partials(line: &PluckerLine, plane: &PlaneH) -> (PluckerLine, ReflectPartials) {
    let n = plane.n;
    let d = plane.d;
    let s = Matrix3::identity() - 2.0 * n * n.transpose();
    let p0 = line.m.cross(&line.v);
    let v_r = s * line.v;
    let p_r = s * p0 - 2.0 * d * n;
    let m_r = v_r.cross(&p_r);

    let ident = Matrix3::identity();
    let dvr_dv = s;
    let dvr_dn = -2.0 * (n.dot(&line.v) * ident + n * line.v.transpose());
    let sk_pr = skew(&p_r);
    let sk_vr = skew(&v_r);
    let dmr_dv = -sk_pr * s + sk_vr * s * skew(&line.m);
    let dmr_dm = -sk_vr * s * skew(&line.v);
    let dmr_dn =
        sk_pr * (2.0 * (n.dot(&line.v) * ident + n * line.v.transpose()))
            - 2.0 * sk_vr * ((n.dot(&p0) + d) * ident + n * p0.transpose());
    let dmr_dd = -2.0 * v_r.cross(&n);

    (
        PluckerLine { v: v_r, m: m_r },
        ReflectPartials { dvr_dv, dvr_dn, dmr_dv, dmr_dm, dmr_dn, dmr_dd },
    )
}

/// Closest points between two lines: returns (point on `a`, point on `b`,
/// gap distance). Errors when the lines are (near-)parallel.
pub fn closest_points(a: &PluckerLine, b: &PluckerLine) -> Result<(Point3<f64>, Point3<f64>, f64), GeomError> {
    let pa = a.closest_point_to_origin();
    let pb = b.closest_point_to_origin();
    let w = pa - pb;
    let dot = a.v.dot(&b.v);
    let denom = 1.0 - dot * dot;
    if denom < 1e-12 {
        return Err(GeomError::ParallelLinePlane { v_dot_n: denom });
    }
    let d1 = a.v.dot(&w);
    let d2 = b.v.dot(&w);
    let s = (-d1 + dot * d2) / denom;
    let t = (d2 - dot * d1) / denom;
    let qa = pa + s * a.v;
    let qb = pb + t * b.v;
    Ok((qa, qb, (qa - qb).norm()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::reflection_matrix;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_line(rng: &mut ChaCha8Rng) -> PluckerLine {
        let p = Point3::new(
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
            rng.gen_range(-200.0..200.0),
        );
        let dir = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ) + Vector3::new(1.2, 0.0, 0.0);
        PluckerLine::from_point_dir(&p, dir).unwrap()
    }

    fn random_plane(rng: &mut ChaCha8Rng) -> PlaneH {
        let n = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ) + Vector3::new(1.5, 0.0, 0.0);
        PlaneH::new(n, rng.gen_range(-300.0..300.0)).unwrap()
    }

    #[test]
    fn moment_of_axis_parallel_line() {
        let line =
            PluckerLine::from_point_dir(&Point3::new(1.0, 2.0, 0.0), Vector3::z()).unwrap();
        assert_abs_diff_eq!(line.m, Vector3::new(-2.0, 1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn intersect_axis_aligned() {
        let line =
            PluckerLine::from_point_dir(&Point3::new(1.0, 2.0, 0.0), Vector3::z()).unwrap();
        // n=[0,0,1], d=−5 is the plane z = 5.
        let plane = PlaneH::new(Vector3::z(), -5.0).unwrap();
        let x = line_plane_intersect(&line, &plane).unwrap();
        assert_abs_diff_eq!(x, Point3::new(1.0, 2.0, 5.0), epsilon = 1e-12);
    }

    #[test]
    fn intersect_parallel_is_error() {
        let line =
            PluckerLine::from_point_dir(&Point3::new(1.0, 2.0, 3.0), Vector3::x()).unwrap();
        let plane = PlaneH::new(Vector3::z(), -5.0).unwrap();
        let err = line_plane_intersect(&line, &plane).unwrap_err();
        assert!(matches!(err, GeomError::ParallelLinePlane { .. }), "got {err:?}");
    }

    #[test]
    fn intersect_matches_parametric_oracle() {
        // Oracle: walk the line parametrically, X = p0 + s v with
        // s solving nᵀ(p0 + s v) + d = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..1000 {
            let line = random_line(&mut rng);
            let plane = random_plane(&mut rng);
            if line.v.dot(&plane.n).abs() < 0.05 {
                continue;
            }
            let p0 = line.closest_point_to_origin();
            let s = -(plane.n.dot(&p0.coords) + plane.d) / plane.n.dot(&line.v);
            // Keep the comparison at rig scale; far-out intersections lose
            // absolute precision in both computations alike.
            if s.abs() > 500.0 {
                continue;
            }
            let oracle = p0 + s * line.v;
            let x = line_plane_intersect(&line, &plane).unwrap();
            assert!((x - oracle).norm() < 1e-10, "{:?} vs {:?}", x, oracle);
        }
    }

    #[test]
    fn intersect_satisfies_both_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..1000 {
            let line = random_line(&mut rng);
            let plane = random_plane(&mut rng);
            if line.v.dot(&plane.n).abs() < 0.05 {
                continue;
            }
            let x = line_plane_intersect(&line, &plane).unwrap();
            assert!(line.residual(&x).norm() < 1e-9, "line residual");
            assert!(plane.signed_distance(&x).abs() < 1e-9, "plane residual");
        }
    }

    #[test]
    fn intersect_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let h = 1e-6;
        for _ in 0..200 {
            let line = random_line(&mut rng);
            let plane = random_plane(&mut rng);
            if line.v.dot(&plane.n).abs() < 0.05 {
                continue;
            }
            let (_, partials) = line_plane_intersect_partials(&line, &plane).unwrap();
            // The partials treat (v, m, n, d) as free coordinates, so the FD
            // probe perturbs them directly without re-normalizing.
            for k in 0..3 {
                let mut dv = Vector3::zeros();
                dv[k] = h;
                let lp = PluckerLine { v: line.v + dv, m: line.m };
                let lm = PluckerLine { v: line.v - dv, m: line.m };
                let fd = (raw_intersect(&lp, &plane) - raw_intersect(&lm, &plane)) / (2.0 * h);
                assert!((fd - partials.dx_dv.column(k)).norm() < 2e-4 * (1.0 + fd.norm()));

                let mp = PluckerLine { v: line.v, m: line.m + dv };
                let mm = PluckerLine { v: line.v, m: line.m - dv };
                let fd = (raw_intersect(&mp, &plane) - raw_intersect(&mm, &plane)) / (2.0 * h);
                assert!((fd - partials.dx_dm.column(k)).norm() < 2e-4 * (1.0 + fd.norm()));

                let np = PlaneH { n: plane.n + dv, d: plane.d };
                let nm = PlaneH { n: plane.n - dv, d: plane.d };
                let fd = (raw_intersect(&line, &np) - raw_intersect(&line, &nm)) / (2.0 * h);
                assert!((fd - partials.dx_dn.column(k)).norm() < 2e-4 * (1.0 + fd.norm()));
            }
            let dp = PlaneH { n: plane.n, d: plane.d + h };
            let dm = PlaneH { n: plane.n, d: plane.d - h };
            let fd = (raw_intersect(&line, &dp) - raw_intersect(&line, &dm)) / (2.0 * h);
            assert!((fd - partials.dx_dd).norm() < 2e-4 * (1.0 + fd.norm()));
        }
    }

    /// Intersection without unit-norm preconditions, for FD probes.
    fn raw_intersect(line: &PluckerLine, plane: &PlaneH) -> Vector3<f64> {
        let a = Matrix3::identity() - line.v * line.v.transpose()
            + plane.n * plane.n.transpose();
        let b = line.m.cross(&line.v) - plane.d * plane.n;
        a.try_inverse().unwrap() * b
    }

    #[test]
    fn retroreflection_keeps_pierce_point() {
        let line =
            PluckerLine::from_point_dir(&Point3::new(0.0, 0.0, 5.0), -Vector3::z()).unwrap();
        let mirror = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let r = reflect_line(&line, &reflection_matrix(&mirror));
        assert_abs_diff_eq!(r.v, Vector3::z(), epsilon = 1e-15);
        assert!(r.distance_to_point(&Point3::origin()) < 1e-12);
    }

    #[test]
    fn line_in_mirror_plane_is_fixed() {
        let mirror = PlaneH::new(Vector3::new(0.3, -0.4, 0.86), -40.0).unwrap();
        // Construct a line inside the mirror plane.
        let p = Point3::from(-mirror.d * mirror.n);
        let dir = mirror.n.cross(&Vector3::x());
        let line = PluckerLine::from_point_dir(&p, dir).unwrap();
        let r = reflect_line(&line, &reflection_matrix(&mirror));
        assert_abs_diff_eq!(r.v, line.v, epsilon = 1e-12);
        assert_abs_diff_eq!(r.m, line.m, epsilon = 1e-9);
    }

    #[test]
    fn reflected_points_satisfy_reflection_constraint() {
        // Oracle: sample points on the reflected line; their mirror images
        // must lie on the original line.
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        for _ in 0..500 {
            let line = random_line(&mut rng);
            let plane = random_plane(&mut rng);
            let h = reflection_matrix(&plane);
            let r = reflect_line(&line, &h);
            assert!(r.v.dot(&r.m).abs() < 1e-9, "Plücker constraint broken");
            for s in [-120.0, -30.0, 0.0, 45.0, 200.0] {
                let back = h.apply_point(&r.point_at(s));
                assert!(line.distance_to_point(&back) < 1e-9);
            }
        }
    }

    #[test]
    fn reflect_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let h = 1e-6;
        for _ in 0..200 {
            let line = random_line(&mut rng);
            let plane = random_plane(&mut rng);
            let (_, partials) = reflect_line_partials(&line, &plane);
            let eval = |l: &PluckerLine, pl: &PlaneH| {
                let s = Matrix3::identity() - 2.0 * pl.n * pl.n.transpose();
                let p0 = l.m.cross(&l.v);
                let v_r = s * l.v;
                let p_r = s * p0 - 2.0 * pl.d * pl.n;
                (v_r, v_r.cross(&p_r))
            };
            for k in 0..3 {
                let mut dv = Vector3::zeros();
                dv[k] = h;
                let (vp, mp) = eval(&PluckerLine { v: line.v + dv, m: line.m }, &plane);
                let (vm, mm) = eval(&PluckerLine { v: line.v - dv, m: line.m }, &plane);
                let fd_v = (vp - vm) / (2.0 * h);
                let fd_m = (mp - mm) / (2.0 * h);
                assert!((fd_v - partials.dvr_dv.column(k)).norm() < 1e-5 * (1.0 + fd_v.norm()));
                assert!((fd_m - partials.dmr_dv.column(k)).norm() < 2e-4 * (1.0 + fd_m.norm()));

                let (_, mp) = eval(&PluckerLine { v: line.v, m: line.m + dv }, &plane);
                let (_, mm) = eval(&PluckerLine { v: line.v, m: line.m - dv }, &plane);
                let fd_m = (mp - mm) / (2.0 * h);
                assert!((fd_m - partials.dmr_dm.column(k)).norm() < 2e-4 * (1.0 + fd_m.norm()));

                let (vp, mp) = eval(&line, &PlaneH { n: plane.n + dv, d: plane.d });
                let (vm, mm) = eval(&line, &PlaneH { n: plane.n - dv, d: plane.d });
                let fd_v = (vp - vm) / (2.0 * h);
                let fd_m = (mp - mm) / (2.0 * h);
                assert!((fd_v - partials.dvr_dn.column(k)).norm() < 2e-4 * (1.0 + fd_v.norm()));
                assert!((fd_m - partials.dmr_dn.column(k)).norm() < 2e-4 * (1.0 + fd_m.norm()));
            }
            let (_, mp) = eval(&line, &PlaneH { n: plane.n, d: plane.d + h });
            let (_, mm) = eval(&line, &PlaneH { n: plane.n, d: plane.d - h });
            let fd_m = (mp - mm) / (2.0 * h);
            assert!((fd_m - partials.dmr_dd).norm() < 2e-4 * (1.0 + fd_m.norm()));
        }
    }

    #[test]
    fn line_min_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let mut max_err: f64 = 0.0;
        for _ in 0..1000 {
            let line = random_line(&mut rng);
            let min = match LineMin::from_line(&line) {
                Ok(min) => min,
                Err(GeomError::NearBranchCut { .. }) => continue,
                Err(e) => panic!("unexpected {e:?}"),
            };
            let back = min.to_line();
            max_err = max_err
                .max((back.v - line.v).norm())
                .max((back.m - line.m).norm() / line.m.norm().max(1.0));
        }
        assert!(max_err < 1e-9, "round-trip error {max_err:.2e}");
    }

    #[test]
    fn line_min_rejects_line_through_origin() {
        let line = PluckerLine::from_point_dir(&Point3::origin(), Vector3::z()).unwrap();
        let err = LineMin::from_line(&line).unwrap_err();
        assert!(matches!(err, GeomError::DegenerateLine { .. }), "got {err:?}");
    }

    #[test]
    fn line_min_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let h = 1e-7;
        for _ in 0..200 {
            let line = random_line(&mut rng);
            let Ok(min) = LineMin::from_line(&line) else { continue };
            let (dv_dw, dm_dw, dm_dmag) = min.jacobian();
            for k in 0..3 {
                let mut dw = Vector3::zeros();
                dw[k] = h;
                let plus = LineMin { w_l: min.w_l + dw, m: min.m }.to_line();
                let minus = LineMin { w_l: min.w_l - dw, m: min.m }.to_line();
                let fd_v = (plus.v - minus.v) / (2.0 * h);
                let fd_m = (plus.m - minus.m) / (2.0 * h);
                assert!((fd_v - dv_dw.column(k)).norm() < 1e-5 * (1.0 + fd_v.norm()));
                assert!((fd_m - dm_dw.column(k)).norm() < 1e-4 * (1.0 + fd_m.norm()));
            }
            let plus = LineMin { w_l: min.w_l, m: min.m + h }.to_line();
            let minus = LineMin { w_l: min.w_l, m: min.m - h }.to_line();
            let fd_m = (plus.m - minus.m) / (2.0 * h);
            assert!((fd_m - dm_dmag).norm() < 1e-6 * (1.0 + fd_m.norm()));
        }
    }

    #[test]
    fn closest_points_of_crossing_lines() {
        let a = PluckerLine::from_point_dir(&Point3::new(0.0, 0.0, 0.0), Vector3::x()).unwrap();
        let b = PluckerLine::from_point_dir(&Point3::new(5.0, 0.0, 3.0), Vector3::y()).unwrap();
        let (qa, qb, gap) = closest_points(&a, &b).unwrap();
        assert_abs_diff_eq!(qa, Point3::new(5.0, 0.0, 0.0), epsilon = 1e-12);
        assert_abs_diff_eq!(qb, Point3::new(5.0, 0.0, 3.0), epsilon = 1e-12);
        assert_abs_diff_eq!(gap, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn closest_points_parallel_is_error() {
        let a = PluckerLine::from_point_dir(&Point3::new(0.0, 0.0, 0.0), Vector3::x()).unwrap();
        let b = PluckerLine::from_point_dir(&Point3::new(0.0, 1.0, 0.0), Vector3::x()).unwrap();
        assert!(closest_points(&a, &b).is_err());
    }
}
