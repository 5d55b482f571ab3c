//! Pinhole projection, PnP extrinsics from checkerboard corners, and
//! back-projection of image points onto known planes.
//!
//! The camera model is a distortion-free pinhole with zero skew (lenses are
//! assumed pre-rectified). Image coordinates are pixels, u right, v down.

use nalgebra::{
    DMatrix, Matrix2, Matrix2x3, Matrix2x6, Matrix3, Matrix6, Point2, Point3, Vector2, Vector3,
    Vector6,
};
use serde::{Deserialize, Serialize};

use crate::geom::{skew, so3_right_jacobian, GeomError, PlaneH, RigidTransformMin};

/// Default isotropic corner noise when a dataset provides none (px).
pub const DEFAULT_CORNER_SIGMA_PX: f64 = 0.5;

/// Pinhole intrinsics with zero skew.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Focal length in x (px).
    pub fx: f64,
    /// Focal length in y (px).
    pub fy: f64,
    /// Principal point x (px).
    pub cx: f64,
    /// Principal point y (px).
    pub cy: f64,
}

impl Intrinsics {
    /// The 3×3 intrinsic matrix K.
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// An image measurement: pixel position and its 2×2 covariance.
///
/// For laser dots the covariance comes from the centroiding model
/// ([`centroid_covariance`]); for corners it defaults to isotropic
/// [`DEFAULT_CORNER_SIGMA_PX`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    /// Horizontal pixel coordinate.
    pub u: f64,
    /// Vertical pixel coordinate.
    pub v: f64,
    /// Measurement covariance (px²), symmetric positive definite.
    pub cov: Matrix2<f64>,
}

impl ImagePoint {
    /// Measurement with isotropic standard deviation `sigma` px.
    pub fn with_sigma(u: f64, v: f64, sigma: f64) -> Self {
        Self { u, v, cov: Matrix2::identity() * sigma * sigma }
    }

    /// Pixel position as a vector.
    pub fn uv(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    /// Inverse square root of the covariance, for residual whitening.
    ///
    /// Computed from the Cholesky factor: cov = L Lᵀ ⇒ W = L⁻¹ with
    /// Wᵀ W = cov⁻¹.
    pub fn whitener(&self) -> Result<Matrix2<f64>, CameraError> {
        let chol = self
            .cov
            .cholesky()
            .ok_or(CameraError::BadCovariance { cov: self.cov })?;
        let l = chol.l();
        // Forward-substitution inverse of a 2×2 lower triangle.
        let inv00 = 1.0 / l[(0, 0)];
        let inv11 = 1.0 / l[(1, 1)];
        Ok(Matrix2::new(inv00, 0.0, -l[(1, 0)] * inv00 * inv11, inv11))
    }
}

/// Checkerboard geometry: the inner-corner grid and its pitch.
///
/// Corner ids are row-major: id = row·cols + col, at board coordinates
/// (col·cell, row·cell, 0) mm with z = 0 in the board frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckerboardSpec {
    /// Corner rows (≥ 2).
    pub rows: usize,
    /// Corner columns (≥ 2).
    pub cols: usize,
    /// Cell pitch (mm).
    pub cell_mm: f64,
}

impl CheckerboardSpec {
    /// Number of corners.
    pub fn corner_count(&self) -> usize {
        self.rows * self.cols
    }

    /// Board-frame position of a corner id.
    pub fn corner_position(&self, id: usize) -> Point3<f64> {
        let row = id / self.cols;
        let col = id % self.cols;
        Point3::new(col as f64 * self.cell_mm, row as f64 * self.cell_mm, 0.0)
    }
}

/// Errors from camera-side operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CameraError {
    /// Projection of a point with non-positive depth.
    #[error("point is behind the camera (depth {depth:.3e} mm)")]
    BehindCamera { depth: f64 },
    /// PnP input is rank deficient (too few or collinear correspondences).
    #[error("degenerate PnP configuration: {detail}")]
    DegenerateConfig { detail: String },
    /// PnP refinement did not meet its convergence criteria.
    #[error("PnP refinement did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    /// Back-projection ray does not meet the plane.
    #[error("viewing ray is parallel to the target plane (|n.dir| = {n_dot_dir:.3e})")]
    RayParallelToPlane { n_dot_dir: f64 },
    /// Centroid covariance of an empty pixel blob.
    #[error("centroid covariance requested for an empty blob")]
    EmptyBlob,
    /// A measurement covariance is not positive definite.
    #[error("image point covariance is not positive definite: {cov:?}")]
    BadCovariance { cov: Matrix2<f64> },
    /// Underlying geometric failure (branch cut etc.).
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Pinhole projection of a world point.
///
/// With rows rᵢᵀ of R = Exp(w) and X_c = R X + t:
///
/// ```text
/// [u]   1      [ fx (r₁ᵀX + t_x) + cx (r₃ᵀX + t_z) ]
/// [v] = ─────  [ fy (r₂ᵀX + t_y) + cy (r₃ᵀX + t_z) ]
///       r₃ᵀX+t_z
/// ```
pub fn project(
    t: &RigidTransformMin,
    k: &Intrinsics,
    x: &Point3<f64>,
) -> Result<Vector2<f64>, CameraError> {
    let xc = t.rotation() * x.coords + t.t;
    if xc.z <= 1e-9 {
        return Err(CameraError::BehindCamera { depth: xc.z });
    }
    Ok(Vector2::new(
        (k.fx * xc.x + k.cx * xc.z) / xc.z,
        (k.fy * xc.y + k.cy * xc.z) / xc.z,
    ))
}

/// Projection Jacobians: 2×6 w.r.t. the transform chart [w; t] and 2×3
/// w.r.t. the world point.
///
/// ```text
/// ∂p/∂X_c = [ fx/z   0    −fx x/z² ]      ∂X_c/∂w = −R [X]× J_r(w)
///           [  0    fy/z  −fy y/z² ]      ∂X_c/∂t = I,  ∂X_c/∂X = R
/// ```
pub fn project_jacobian(
    t: &RigidTransformMin,
    k: &Intrinsics,
    x: &Point3<f64>,
) -> Result<(Vector2<f64>, Matrix2x6<f64>, Matrix2x3<f64>), CameraError> {
    let r = t.rotation();
    let xc = r * x.coords + t.t;
    if xc.z <= 1e-9 {
        return Err(CameraError::BehindCamera { depth: xc.z });
    }
    let uv = Vector2::new(
        (k.fx * xc.x + k.cx * xc.z) / xc.z,
        (k.fy * xc.y + k.cy * xc.z) / xc.z,
    );
    let iz = 1.0 / xc.z;
    let dp_dxc = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * xc.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * xc.y * iz * iz,
    );
    let dxc_dw = -r * skew(&x.coords) * so3_right_jacobian(&t.w);
    let mut j_t = Matrix2x6::zeros();
    j_t.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp_dxc * dxc_dw));
    j_t.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp_dxc);
    let j_x = dp_dxc * r;
    Ok((uv, j_t, j_x))
}

/// Covariance of a blob centroid: the per-pixel covariance shrinks with the
/// pixel count, Σ_x = Σ_P / N.
pub fn centroid_covariance(pixel_cov: &Matrix2<f64>, n_pixels: usize) -> Result<Matrix2<f64>, CameraError> {
    if n_pixels == 0 {
        return Err(CameraError::EmptyBlob);
    }
    Ok(pixel_cov / n_pixels as f64)
}

/// Back-projects an image point onto a world plane.
///
/// The viewing ray through pixel x has camera center C = −Rᵀt and direction
/// Rᵀ K⁻¹ [u v 1]ᵀ; the result is its intersection with the plane.
pub fn backproject_to_plane(
    x: &ImagePoint,
    t: &RigidTransformMin,
    k: &Intrinsics,
    plane: &PlaneH,
) -> Result<Point3<f64>, CameraError> {
    let r = t.rotation();
    let center = -(r.transpose() * t.t);
    let ray_cam = Vector3::new((x.u - k.cx) / k.fx, (x.v - k.cy) / k.fy, 1.0);
    let dir = (r.transpose() * ray_cam).normalize();
    let n_dot_dir = plane.n.dot(&dir);
    if n_dot_dir.abs() < 1e-9 {
        return Err(CameraError::RayParallelToPlane { n_dot_dir });
    }
    let s = -(plane.n.dot(&center) + plane.d) / n_dot_dir;
    Ok(Point3::from(center + s * dir))
}

/// A PnP solution: extrinsics with covariance and fit diagnostics.
#[derive(Debug, Clone)]
pub struct PnpResult {
    /// World-to-camera transform.
    pub t: RigidTransformMin,
    /// 6×6 covariance of [w; t] from the Gauss-Newton normal matrix.
    pub cov: Matrix6<f64>,
    /// Mean reprojection error over the used corners (px).
    pub mean_reproj_px: f64,
    /// Levenberg-Marquardt iterations spent in refinement.
    pub iterations: usize,
}

/// One corner correspondence: board corner id and its image measurement.
#[derive(Debug, Clone, Copy)]
pub struct CornerObservation {
    /// Row-major corner id on the board.
    pub id: usize,
    /// Image measurement.
    pub point: ImagePoint,
}

/// Extrinsics of a planar checkerboard: homography (DLT) initialization
/// followed by Levenberg-Marquardt on covariance-whitened reprojection
/// residuals.
pub fn solve_pnp(
    corners: &[CornerObservation],
    board: &CheckerboardSpec,
    k: &Intrinsics,
) -> Result<PnpResult, CameraError> {
    if corners.len() < 4 {
        return Err(CameraError::DegenerateConfig {
            detail: format!("{} correspondences, need at least 4", corners.len()),
        });
    }
    let pairs: Vec<(Point2<f64>, Vector2<f64>, ImagePoint)> = corners
        .iter()
        .map(|c| {
            let x = board.corner_position(c.id);
            (Point2::new(x.x, x.y), c.point.uv(), c.point)
        })
        .collect();

    let h = planar_homography(&pairs)?;
    let init = extrinsics_from_homography(&h, k)?;
    refine_pnp(init, &pairs, k)
}

/// Direct linear transform for the board-to-image homography with
/// Hartley-style normalization of both point sets.
fn planar_homography(
    pairs: &[(Point2<f64>, Vector2<f64>, ImagePoint)],
) -> Result<Matrix3<f64>, CameraError> {
    let (t_board, board_n): (Matrix3<f64>, Vec<Vector2<f64>>) =
        normalize_points(pairs.iter().map(|(b, _, _)| Vector2::new(b.x, b.y)));
    let (t_img, img_n): (Matrix3<f64>, Vec<Vector2<f64>>) =
        normalize_points(pairs.iter().map(|(_, uv, _)| *uv));

    let mut a = DMatrix::<f64>::zeros(2 * pairs.len(), 9);
    for (i, (b, x)) in board_n.iter().zip(img_n.iter()).enumerate() {
        let (bx, by) = (b.x, b.y);
        let (u, v) = (x.x, x.y);
        a.row_mut(2 * i).copy_from_slice(&[
            bx, by, 1.0, 0.0, 0.0, 0.0, -u * bx, -u * by, -u,
        ]);
        a.row_mut(2 * i + 1).copy_from_slice(&[
            0.0, 0.0, 0.0, bx, by, 1.0, -v * bx, -v * by, -v,
        ]);
    }
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let sigma_max = sv[0];
    // h has 8 DoF; with a unique solution only the ninth singular value is
    // (near) zero. A tiny eighth value means collinear or repeated points.
    if sv[7] < 1e-10 * sigma_max {
        return Err(CameraError::DegenerateConfig {
            detail: format!(
                "homography system is rank deficient (sigma8/sigma1 = {:.3e})",
                sv[7] / sigma_max
            ),
        });
    }
    let v_t = svd.v_t.as_ref().expect("svd computed with V^T");
    let h_vec = v_t.row(8);
    let h_n = Matrix3::new(
        h_vec[0], h_vec[1], h_vec[2], h_vec[3], h_vec[4], h_vec[5], h_vec[6], h_vec[7], h_vec[8],
    );
    let t_img_inv = t_img.try_inverse().expect("normalization is invertible");
    Ok(t_img_inv * h_n * t_board)
}

/// Similarity normalization: centroid to origin, mean radius √2.
fn normalize_points<I: Iterator<Item = Vector2<f64>>>(
    points: I,
) -> (Matrix3<f64>, Vec<Vector2<f64>>) {
    let pts: Vec<Vector2<f64>> = points.collect();
    let centroid = pts.iter().sum::<Vector2<f64>>() / pts.len() as f64;
    let mean_dist =
        pts.iter().map(|p| (p - centroid).norm()).sum::<f64>() / pts.len() as f64;
    let scale = if mean_dist > 1e-12 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    let t = Matrix3::new(
        scale, 0.0, -scale * centroid.x, 0.0, scale, -scale * centroid.y, 0.0, 0.0, 1.0,
    );
    let mapped = pts.iter().map(|p| (p - centroid) * scale).collect();
    (t, mapped)
}

/// Extrinsics from a board-to-image homography: K⁻¹H ≈ [r₁ r₂ t] up to
/// scale; the rotation is completed with r₃ = r₁×r₂ and re-orthonormalized
/// through SVD.
fn extrinsics_from_homography(
    h: &Matrix3<f64>,
    k: &Intrinsics,
) -> Result<RigidTransformMin, CameraError> {
    let k_inv = k
        .matrix()
        .try_inverse()
        .expect("intrinsic matrix with positive focal lengths is invertible");
    let m = k_inv * h;
    let m1 = m.column(0).into_owned();
    let m2 = m.column(1).into_owned();
    let m3 = m.column(2).into_owned();
    let scale = 2.0 / (m1.norm() + m2.norm());
    let (m1, m2, mut t) = (m1 * scale, m2 * scale, m3 * scale);
    let (m1, m2) = if t.z < 0.0 {
        t = -t;
        (-m1, -m2)
    } else {
        (m1, m2)
    };
    let r_raw = Matrix3::from_columns(&[m1, m2, m1.cross(&m2)]);
    let svd = r_raw.svd(true, true);
    let u = svd.u.expect("svd with U");
    let v_t = svd.v_t.expect("svd with V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.column_mut(2).neg_mut();
        r = u_fixed * v_t;
    }
    Ok(RigidTransformMin::from_rt(&r, t)?)
}

/// Levenberg-Marquardt refinement of PnP extrinsics on whitened residuals.
fn refine_pnp(
    init: RigidTransformMin,
    pairs: &[(Point2<f64>, Vector2<f64>, ImagePoint)],
    k: &Intrinsics,
) -> Result<PnpResult, CameraError> {
    const MAX_ITERS: usize = 100;
    let whiteners: Vec<Matrix2<f64>> =
        pairs.iter().map(|(_, _, obs)| obs.whitener()).collect::<Result<_, _>>()?;

    let cost_of = |t: &RigidTransformMin| -> Result<f64, CameraError> {
        let mut c = 0.0;
        for ((b, uv, _), w) in pairs.iter().zip(&whiteners) {
            let p = project(t, k, &Point3::new(b.x, b.y, 0.0))?;
            c += (w * (uv - p)).norm_squared();
        }
        Ok(c)
    };

    let mut t = init;
    let mut lambda = 1e-3;
    let mut cost = cost_of(&t)?;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < MAX_ITERS {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for ((b, uv, _), w) in pairs.iter().zip(&whiteners) {
            let (p, j_t, _) = project_jacobian(&t, k, &Point3::new(b.x, b.y, 0.0))?;
            let jw = w * j_t;
            let rw = w * (uv - p);
            jtj += jw.transpose() * jw;
            jtr += jw.transpose() * rw;
        }
        if jtr.norm() < 1e-10 {
            converged = true;
            break;
        }
        let mut improved = false;
        for _ in 0..25 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = RigidTransformMin {
                w: t.w + step.fixed_rows::<3>(0).into_owned(),
                t: t.t + step.fixed_rows::<3>(3).into_owned(),
            };
            let c_new = match cost_of(&candidate) {
                Ok(c) => c,
                Err(_) => {
                    lambda *= 10.0;
                    continue;
                }
            };
            if c_new < cost {
                let small_step = step.norm() < 1e-12;
                t = candidate;
                cost = c_new;
                lambda = (lambda * 0.1).max(1e-12);
                improved = true;
                if small_step {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved || converged {
            converged = converged || !improved;
            break;
        }
    }
    if !converged && iterations >= MAX_ITERS {
        return Err(CameraError::NoConvergence { iterations });
    }

    // Covariance and diagnostics at the solution.
    let mut jtj = Matrix6::<f64>::zeros();
    let mut err_sum = 0.0;
    for ((b, uv, _), w) in pairs.iter().zip(&whiteners) {
        let (p, j_t, _) = project_jacobian(&t, k, &Point3::new(b.x, b.y, 0.0))?;
        let jw = w * j_t;
        jtj += jw.transpose() * jw;
        err_sum += (uv - p).norm();
    }
    let cov = jtj.try_inverse().unwrap_or_else(Matrix6::zeros);
    Ok(PnpResult {
        t,
        cov,
        mean_reproj_px: err_sum / pairs.len() as f64,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn test_k() -> Intrinsics {
        Intrinsics { fx: 1000.0, fy: 1000.0, cx: 500.0, cy: 400.0 }
    }

    #[test]
    fn project_on_optical_axis() {
        let uv = project(
            &RigidTransformMin::identity(),
            &test_k(),
            &Point3::new(0.0, 0.0, 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(uv, Vector2::new(500.0, 400.0), epsilon = 1e-12);
    }

    #[test]
    fn project_off_axis() {
        let uv = project(
            &RigidTransformMin::identity(),
            &test_k(),
            &Point3::new(0.1, -0.2, 2.0),
        )
        .unwrap();
        assert_abs_diff_eq!(uv, Vector2::new(550.0, 300.0), epsilon = 1e-12);
    }

    #[test]
    fn project_behind_camera_is_error() {
        let err = project(
            &RigidTransformMin::identity(),
            &test_k(),
            &Point3::new(0.0, 0.0, -1.0),
        )
        .unwrap_err();
        assert!(matches!(err, CameraError::BehindCamera { .. }));
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> RigidTransformMin {
        let axis = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
        .normalize();
        RigidTransformMin {
            w: axis * rng.gen_range(0.0..0.8),
            t: Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(300.0..800.0),
            ),
        }
    }

    #[test]
    fn project_matches_homogeneous_pipeline_oracle() {
        // Oracle: x ∝ K [R | t] X in homogeneous coordinates.
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        let k = test_k();
        for _ in 0..500 {
            let t = random_pose(&mut rng);
            let x = Point3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            );
            let xc = t.rotation() * x.coords + t.t;
            if xc.z < 1.0 {
                continue;
            }
            let hom = k.matrix() * xc;
            let oracle = Vector2::new(hom.x / hom.z, hom.y / hom.z);
            let uv = project(&t, &k, &x).unwrap();
            assert!((uv - oracle).norm() < 1e-10);
        }
    }

    #[test]
    fn jacobian_on_axis_closed_form() {
        let k = test_k();
        let z = 2.0;
        let (_, j_t, _) =
            project_jacobian(&RigidTransformMin::identity(), &k, &Point3::new(0.0, 0.0, z))
                .unwrap();
        // ∂u/∂t_x = fx/z for a point on the optical axis.
        assert_abs_diff_eq!(j_t[(0, 3)], k.fx / z, epsilon = 1e-12);
        assert_abs_diff_eq!(j_t[(1, 4)], k.fy / z, epsilon = 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let k = test_k();
        let h = 1e-6;
        let mut checked = 0;
        while checked < 100 {
            let t = random_pose(&mut rng);
            let x = Point3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-50.0..50.0),
            );
            let Ok((_, j_t, j_x)) = project_jacobian(&t, &k, &x) else { continue };
            checked += 1;
            for idx in 0..6 {
                let mut tp = t;
                let mut tm = t;
                if idx < 3 {
                    tp.w[idx] += h;
                    tm.w[idx] -= h;
                } else {
                    tp.t[idx - 3] += h;
                    tm.t[idx - 3] -= h;
                }
                let fd = (project(&tp, &k, &x).unwrap() - project(&tm, &k, &x).unwrap())
                    / (2.0 * h);
                let rel = (fd - j_t.column(idx)).norm() / fd.norm().max(1.0);
                assert!(rel < 1e-5, "transform column {idx}: rel err {rel:.2e}");
            }
            for idx in 0..3 {
                let mut dx = Vector3::zeros();
                dx[idx] = h;
                let fd = (project(&t, &k, &(x + dx)).unwrap()
                    - project(&t, &k, &(x - dx)).unwrap())
                    / (2.0 * h);
                let rel = (fd - j_x.column(idx)).norm() / fd.norm().max(1.0);
                assert!(rel < 1e-5, "point column {idx}: rel err {rel:.2e}");
            }
        }
    }

    #[test]
    fn translation_perturbation_matches_first_order() {
        let k = test_k();
        let t = RigidTransformMin { w: Vector3::zeros(), t: Vector3::new(0.0, 0.0, 500.0) };
        let x = Point3::new(20.0, -10.0, 0.0);
        let (uv0, j_t, _) = project_jacobian(&t, &k, &x).unwrap();
        let dt = Vector3::new(0.001, -0.002, 0.003);
        let mut t2 = t;
        t2.t += dt;
        let uv1 = project(&t2, &k, &x).unwrap();
        let predicted = uv0 + j_t.fixed_view::<2, 3>(0, 3) * dt;
        assert!((uv1 - predicted).norm() < 1e-6);
    }

    #[test]
    fn centroid_covariance_divides_by_n() {
        let sigma = Matrix2::new(4.0, 0.0, 0.0, 4.0);
        let c = centroid_covariance(&sigma, 100).unwrap();
        assert_abs_diff_eq!(c, Matrix2::new(0.04, 0.0, 0.0, 0.04), epsilon = 1e-15);
        let c1 = centroid_covariance(&sigma, 1).unwrap();
        assert_abs_diff_eq!(c1, sigma, epsilon = 1e-15);
        assert!(matches!(centroid_covariance(&sigma, 0), Err(CameraError::EmptyBlob)));
    }

    #[test]
    fn centroid_covariance_matches_blob_monte_carlo() {
        // Blobs of n pixels with anisotropic per-pixel scatter: the sample
        // covariance of blob centroids approaches Σ_P/n.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let sigma_p = Matrix2::new(4.0, 1.2, 1.2, 2.5);
        let chol = sigma_p.cholesky().unwrap().l();
        let n_pixels = 50;
        let n_blobs = 10_000;
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut centroids = Vec::with_capacity(n_blobs);
        for _ in 0..n_blobs {
            let mut sum = Vector2::zeros();
            for _ in 0..n_pixels {
                let z = Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
                sum += chol * z;
            }
            centroids.push(sum / n_pixels as f64);
        }
        let mean = centroids.iter().sum::<Vector2<f64>>() / n_blobs as f64;
        let mut cov = Matrix2::zeros();
        for c in &centroids {
            let d = c - mean;
            cov += d * d.transpose();
        }
        cov /= (n_blobs - 1) as f64;
        let expected = centroid_covariance(&sigma_p, n_pixels).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let rel = (cov[(i, j)] - expected[(i, j)]).abs() / expected[(i, j)].abs();
                assert!(rel < 0.2, "entry ({i},{j}): rel err {rel:.3}");
            }
        }
    }

    fn synthesize_corners(
        t: &RigidTransformMin,
        board: &CheckerboardSpec,
        k: &Intrinsics,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Vec<CornerObservation> {
        let normal = Normal::new(0.0, sigma.max(1e-300)).unwrap();
        (0..board.corner_count())
            .map(|id| {
                let uv = project(t, k, &board.corner_position(id)).unwrap();
                let (du, dv) = if sigma > 0.0 {
                    (normal.sample(rng), normal.sample(rng))
                } else {
                    (0.0, 0.0)
                };
                CornerObservation {
                    id,
                    point: ImagePoint::with_sigma(uv.x + du, uv.y + dv, sigma.max(0.5)),
                }
            })
            .collect()
    }

    #[test]
    fn pnp_exact_on_noise_free_data() {
        let board = CheckerboardSpec { rows: 8, cols: 11, cell_mm: 10.0 };
        let k = test_k();
        let truth = RigidTransformMin {
            w: Vector3::zeros(),
            t: Vector3::new(-50.0, -35.0, 500.0),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let corners = synthesize_corners(&truth, &board, &k, 0.0, &mut rng);
        let result = solve_pnp(&corners, &board, &k).unwrap();
        assert!((result.t.w - truth.w).norm() < 1e-6, "rotation error");
        assert!((result.t.t - truth.t).norm() < 1e-6, "translation error");
        assert!(result.mean_reproj_px < 1e-8);
    }

    #[test]
    fn pnp_accuracy_under_noise() {
        let board = CheckerboardSpec { rows: 8, cols: 11, cell_mm: 10.0 };
        let k = test_k();
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut rot_sum = 0.0;
        let mut trans_sum = 0.0;
        let trials = 20;
        for trial in 0..trials {
            let truth = RigidTransformMin {
                w: Vector3::new(0.1, -0.15, 0.05),
                t: Vector3::new(-40.0, -30.0, 450.0 + 5.0 * trial as f64),
            };
            let corners = synthesize_corners(&truth, &board, &k, 0.5, &mut rng);
            let result = solve_pnp(&corners, &board, &k).unwrap();
            let rot_err_deg = (result.t.w - truth.w).norm().to_degrees();
            let trans_err = (result.t.t - truth.t).norm();
            // A frontal planar board couples tilt and lateral translation,
            // a weakly observable pair with a heavy error tail; individual
            // trials get a loose cap and the mean carries the real check.
            assert!(rot_err_deg < 1.5, "trial {trial}: rotation error {rot_err_deg:.4}°");
            assert!(trans_err < 8.0, "trial {trial}: translation error {trans_err:.4} mm");
            rot_sum += rot_err_deg;
            trans_sum += trans_err;
        }
        let rot_mean = rot_sum / trials as f64;
        let trans_mean = trans_sum / trials as f64;
        assert!(rot_mean < 0.4, "mean rotation error {rot_mean:.4}°");
        assert!(trans_mean < 3.0, "mean translation error {trans_mean:.4} mm");
    }

    #[test]
    fn pnp_too_few_points_is_degenerate() {
        let board = CheckerboardSpec { rows: 8, cols: 11, cell_mm: 10.0 };
        let k = test_k();
        // Three corners along one board row are collinear and too few.
        let truth = RigidTransformMin { w: Vector3::zeros(), t: Vector3::new(0.0, 0.0, 500.0) };
        let corners: Vec<CornerObservation> = (0..3)
            .map(|id| {
                let uv = project(&truth, &k, &board.corner_position(id)).unwrap();
                CornerObservation { id, point: ImagePoint::with_sigma(uv.x, uv.y, 0.5) }
            })
            .collect();
        let err = solve_pnp(&corners, &board, &k).unwrap_err();
        assert!(matches!(err, CameraError::DegenerateConfig { .. }));
    }

    #[test]
    fn pnp_collinear_points_are_degenerate() {
        let board = CheckerboardSpec { rows: 8, cols: 11, cell_mm: 10.0 };
        let k = test_k();
        let truth = RigidTransformMin { w: Vector3::zeros(), t: Vector3::new(0.0, 0.0, 500.0) };
        // Six corners from the first board row: collinear in board and image.
        let corners: Vec<CornerObservation> = (0..6)
            .map(|id| {
                let uv = project(&truth, &k, &board.corner_position(id)).unwrap();
                CornerObservation { id, point: ImagePoint::with_sigma(uv.x, uv.y, 0.5) }
            })
            .collect();
        let err = solve_pnp(&corners, &board, &k).unwrap_err();
        assert!(matches!(err, CameraError::DegenerateConfig { .. }), "got {err:?}");
    }

    #[test]
    fn pnp_covariance_shrinks_with_corner_count() {
        let k = test_k();
        let mut rng = ChaCha8Rng::seed_from_u64(56);
        let truth = RigidTransformMin {
            w: Vector3::new(0.05, -0.1, 0.02),
            t: Vector3::new(-40.0, -30.0, 500.0),
        };
        let small = CheckerboardSpec { rows: 4, cols: 5, cell_mm: 20.0 };
        let large = CheckerboardSpec { rows: 8, cols: 11, cell_mm: 10.0 };
        let corners_small = synthesize_corners(&truth, &small, &k, 0.5, &mut rng);
        let corners_large = synthesize_corners(&truth, &large, &k, 0.5, &mut rng);
        let trace_small = solve_pnp(&corners_small, &small, &k).unwrap().cov.trace();
        let trace_large = solve_pnp(&corners_large, &large, &k).unwrap().cov.trace();
        assert!(
            trace_large < trace_small,
            "covariance should shrink: {trace_large:.3e} vs {trace_small:.3e}"
        );
    }

    #[test]
    fn backproject_principal_point() {
        let k = test_k();
        let t = RigidTransformMin { w: Vector3::zeros(), t: Vector3::new(0.0, 0.0, 500.0) };
        let plane = PlaneH::new(Vector3::z(), 0.0).unwrap();
        let x = ImagePoint::with_sigma(k.cx, k.cy, 0.5);
        let p = backproject_to_plane(&x, &t, &k, &plane).unwrap();
        assert_abs_diff_eq!(p, Point3::origin(), epsilon = 1e-9);
    }

    #[test]
    fn backproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(57);
        let k = test_k();
        for _ in 0..300 {
            let t = random_pose(&mut rng);
            let plane = PlaneH::new(
                Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), 1.0),
                rng.gen_range(-50.0..50.0),
            )
            .unwrap();
            let x_world = Point3::new(
                rng.gen_range(-80.0..80.0),
                rng.gen_range(-80.0..80.0),
                0.0,
            );
            // Slide the point onto the plane along z.
            let z = -(plane.d + plane.n.x * x_world.x + plane.n.y * x_world.y) / plane.n.z;
            let on_plane = Point3::new(x_world.x, x_world.y, z);
            let Ok(uv) = project(&t, &k, &on_plane) else { continue };
            let back = backproject_to_plane(
                &ImagePoint::with_sigma(uv.x, uv.y, 0.5),
                &t,
                &k,
                &plane,
            )
            .unwrap();
            assert!((back - on_plane).norm() < 1e-9, "{back:?} vs {on_plane:?}");
            let reproj = project(&t, &k, &back).unwrap();
            assert!((reproj - uv).norm() < 1e-9);
        }
    }

    #[test]
    fn backproject_parallel_ray_is_error() {
        let k = test_k();
        let t = RigidTransformMin { w: Vector3::zeros(), t: Vector3::new(0.0, 0.0, 500.0) };
        // A plane containing the viewing direction of the principal ray.
        let plane = PlaneH::new(Vector3::x(), -10.0).unwrap();
        let x = ImagePoint::with_sigma(k.cx, k.cy, 0.5);
        let err = backproject_to_plane(&x, &t, &k, &plane).unwrap_err();
        assert!(matches!(err, CameraError::RayParallelToPlane { .. }));
    }
}
