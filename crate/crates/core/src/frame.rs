//! Home-frame recovery: the mirror's rest pose, fast axis, and pivot point.
//!
//! The per-pulse mirror planes from the joint estimator live in {W}. This
//! module anchors them to the device: the rest (home) plane from the pulses
//! fired with both drives off, the fast rotation axis from the pulses with
//! only the fast drive on, and the pivot point that all planes share. The
//! result is a home frame {F} in which a mirror plane decomposes into the
//! two tilt angles and the piston displacement that the Hall calibration
//! regresses against.
//!
//! Geometric facts used:
//!
//! * The fast axis lies in the mirror plane, so every normal in the home and
//!   fast-only segments is perpendicular to it; the axis is the
//!   least-singular right vector of the stacked normals.
//! * Rotations move every mirror plane about the pivot, so the pivot is the
//!   common point of the stacked plane equations. When the scan only ever
//!   rotated about one axis the planes form a pencil and the pivot is only
//!   defined up to that axis.
//! * The piston drive displaces each plane along its own normal, so the
//!   pulsed planes share no exact point; the pivot solve models the shared
//!   displacement sinusoid over the pulse times to keep it out of the pivot.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geom::{GeomError, PlaneH};

/// Drive state of the scanner when a pulse fired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanSegment {
    /// Both drives off; mirror at rest.
    Home,
    /// Only the fast-axis drive on.
    FastOnly,
    /// Both drives on.
    TwoAxis,
}

/// Mirror pose in the home frame: two tilts and the piston displacement.
///
/// The mirror normal is n = R_X(α)·R_Y(β)·e₃ =
/// (sin β, −sin α·cos β, cos α·cos β), and the plane crosses the home-normal
/// axis at displacement d.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorPose {
    /// Rotation about the fast axis (rad).
    pub alpha_rad: f64,
    /// Rotation about the slow axis (rad).
    pub beta_rad: f64,
    /// Piston displacement along the home normal (mm).
    pub d_mm: f64,
}

impl MirrorPose {
    /// The mirror plane in {F} for this pose.
    pub fn plane(&self) -> PlaneH {
        let (sa, ca) = self.alpha_rad.sin_cos();
        let (sb, cb) = self.beta_rad.sin_cos();
        let n = Vector3::new(sb, -sa * cb, ca * cb);
        PlaneH { n, d: -n.z * self.d_mm }
    }
}

/// The recovered home frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomeFrame {
    /// Home-frame axes as columns in {W}: fast axis, complement, home normal.
    pub r0: Matrix3<f64>,
    /// Pivot point in {W} (mm).
    pub origin: Point3<f64>,
    /// Rest mirror plane in {W}.
    pub home_plane: PlaneH,
    /// |e_Fᵀ n₀| before re-orthogonalization; small means the axis estimate
    /// is consistent with the rest plane.
    pub axis_normal_dot: f64,
    /// The scan never rotated about a second axis, so the pivot is only
    /// known up to a point on the rotation axis.
    pub origin_ambiguous: bool,
    /// Piston amplitude fitted during the pivot solve (mm); 0 when the
    /// piston was not modeled.
    pub piston_amp_mm: f64,
    /// Piston frequency fitted during the pivot solve (Hz); 0 when the
    /// piston was not modeled.
    pub piston_hz: f64,
}

/// Options for [`estimate_home_frame`].
#[derive(Debug, Clone, Copy)]
pub struct FrameOptions {
    /// Accept a pencil-degenerate pivot and return its minimum-norm axis
    /// point with `origin_ambiguous` set, instead of erroring.
    pub allow_ambiguous_origin: bool,
    /// Solve the pivot jointly with a shared piston sinusoid over the
    /// two-axis pulses.
    pub model_piston: bool,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { allow_ambiguous_origin: false, model_piston: true }
    }
}

/// Errors from home-frame recovery.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrameError {
    /// Plane and segment slices differ in length.
    #[error("{planes} planes but {segments} segment tags")]
    MismatchedLengths { planes: usize, segments: usize },
    /// Plane and pulse-time slices differ in length.
    #[error("{planes} planes but {times} pulse times")]
    MismatchedTimes { planes: usize, times: usize },
    /// No pulse was tagged as home.
    #[error("no home-segment pulses")]
    NoHomePulses,
    /// Axis fit needs normals that actually span a plane.
    #[error("axis fit is rank deficient (sigma ratio {sv_ratio:.3e})")]
    RankDeficientAxis { sv_ratio: f64 },
    /// The planes form a pencil; the pivot is ambiguous along the axis.
    #[error("planes form a pencil (sigma ratio {sv_ratio:.3e}); pivot ambiguous")]
    PencilDegenerate { sv_ratio: f64 },
    /// A plane tilts 90° or more from the home normal; the pose
    /// decomposition has no solution there.
    #[error("plane normal almost perpendicular to the home normal (n_z = {nz:.3e})")]
    PoseOutOfRange { nz: f64 },
    /// Geometry failure.
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Normals of the given planes, flipped into the hemisphere of the first.
fn consistent_normals(planes: &[&PlaneH]) -> Vec<Vector3<f64>> {
    let mut out: Vec<Vector3<f64>> = Vec::with_capacity(planes.len());
    for plane in planes {
        let n = if let Some(first) = out.first() {
            if plane.n.dot(first) < 0.0 { -plane.n } else { plane.n }
        } else {
            plane.n
        };
        out.push(n);
    }
    out
}

fn first_nonzero_positive(v: Vector3<f64>) -> Vector3<f64> {
    for k in 0..3 {
        if v[k].abs() > 1e-12 {
            return if v[k] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Fast axis from the stacked normals of the home and fast-only pulses.
///
/// All those normals are perpendicular to the axis, so the axis is the right
/// singular vector of the smallest singular value. The middle singular value
/// must be well separated from zero, otherwise the normals are (nearly)
/// collinear and any vector in their orthogonal plane would fit.
pub fn estimate_fast_axis(normals: &[Vector3<f64>]) -> Result<Vector3<f64>, FrameError> {
    let mut stacked = DMatrix::<f64>::zeros(normals.len(), 3);
    for (i, n) in normals.iter().enumerate() {
        stacked.row_mut(i).copy_from_slice(&[n.x, n.y, n.z]);
    }
    let svd = stacked.svd(false, true);
    let sv = &svd.singular_values;
    if sv.len() < 3 || sv[0] <= 0.0 {
        return Err(FrameError::RankDeficientAxis { sv_ratio: 0.0 });
    }
    let ratio = sv[1] / sv[0];
    if ratio <= 1e-9 {
        return Err(FrameError::RankDeficientAxis { sv_ratio: ratio });
    }
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let axis = Vector3::new(vt[(2, 0)], vt[(2, 1)], vt[(2, 2)]);
    Ok(first_nonzero_positive(axis))
}

/// Pivot point common to all mirror planes.
///
/// Minimizes the summed squared plane distances `(n_i^T X + d_i)^2` over X.
/// When the normals are rank-deficient the planes form a pencil and the
/// pivot is only determined up to the pencil axis; the truncated solve then
/// returns the minimum-norm point on that axis, flagged as ambiguous.
pub fn estimate_origin(
    planes: &[&PlaneH],
    allow_ambiguous: bool,
) -> Result<(Point3<f64>, bool), FrameError> {
    let mut normals = DMatrix::<f64>::zeros(planes.len(), 3);
    let mut rhs = DVector::<f64>::zeros(planes.len());
    for (i, plane) in planes.iter().enumerate() {
        normals.row_mut(i).copy_from_slice(&[plane.n.x, plane.n.y, plane.n.z]);
        rhs[i] = -plane.d;
    }
    let svd = normals.svd(true, true);
    let sv = &svd.singular_values;
    let pencil_ratio = sv[2] / sv[0];
    let ambiguous = pencil_ratio < 1e-6;
    if ambiguous && !allow_ambiguous {
        return Err(FrameError::PencilDegenerate { sv_ratio: pencil_ratio });
    }
    let eps = if ambiguous { 1e-6 * sv[0] } else { 0.0 };
    let x = svd.solve(&rhs, eps).expect("requested U and V^T");
    Ok((Point3::new(x[0], x[1], x[2]), ambiguous))
}

/// Pivot point solved jointly with a shared piston sinusoid.
#[derive(Debug, Clone, Copy)]
pub struct OriginFit {
    /// Pivot point in {W} (mm).
    pub origin: Point3<f64>,
    /// Fitted piston amplitude (mm); 0 when the piston was not modeled.
    pub piston_amp_mm: f64,
    /// Fitted piston frequency (Hz); 0 when the piston was not modeled.
    pub piston_hz: f64,
    /// Pivot only determined up to the pencil axis.
    pub ambiguous: bool,
}

/// Pivot point with the piston displacement modeled out.
///
/// With the piston drive on, each plane is displaced along its own normal by
/// a shared sinusoid, so the planes have no common point; the part of the
/// sinusoid that correlates with the tilt pattern over the pulse set lands
/// in a plain least-squares pivot as a bias of several millimetres. For any
/// fixed frequency the sinusoid coefficients enter the plane equations
/// linearly and are solved jointly with X; the frequency itself comes from a
/// grid up to the median-gap pseudo-Nyquist with one parabolic refinement.
/// `active` marks the
/// pulses with the piston drive on; the sinusoid basis is zero elsewhere,
/// and with fewer than 8 active pulses the solve falls back to
/// [`estimate_origin`].
pub fn estimate_origin_with_piston(
    planes: &[&PlaneH],
    times: &[f64],
    active: &[bool],
    allow_ambiguous: bool,
) -> Result<OriginFit, FrameError> {
    if planes.len() != times.len() || planes.len() != active.len() {
        return Err(FrameError::MismatchedTimes {
            planes: planes.len(),
            times: times.len().min(active.len()),
        });
    }
    // Pencil detection from the normals alone, as in `estimate_origin`.
    let mut normals = DMatrix::<f64>::zeros(planes.len(), 3);
    for (i, plane) in planes.iter().enumerate() {
        normals.row_mut(i).copy_from_slice(&[plane.n.x, plane.n.y, plane.n.z]);
    }
    let svn = normals.singular_values();
    let pencil_ratio = svn[2] / svn[0];
    let ambiguous = pencil_ratio < 1e-6;
    if ambiguous && !allow_ambiguous {
        return Err(FrameError::PencilDegenerate { sv_ratio: pencil_ratio });
    }

    let active_times: Vec<f64> = times
        .iter()
        .zip(active)
        .filter(|(_, a)| **a)
        .map(|(t, _)| *t)
        .collect();
    let span = active_times
        .last()
        .zip(active_times.first())
        .map_or(0.0, |(hi, lo)| hi - lo);
    if active_times.len() < 8 || span <= 0.0 {
        let (origin, ambiguous) = estimate_origin(planes, allow_ambiguous)?;
        return Ok(OriginFit { origin, piston_amp_mm: 0.0, piston_hz: 0.0, ambiguous });
    }

    let eps_rel = if ambiguous { 1e-6 } else { 1e-10 };
    let solve_at = |f_hz: f64| -> (f64, DVector<f64>) {
        let omega = 2.0 * std::f64::consts::PI * f_hz;
        let mut m = DMatrix::<f64>::zeros(planes.len(), 5);
        let mut rhs = DVector::<f64>::zeros(planes.len());
        for (i, plane) in planes.iter().enumerate() {
            let (s, c) = if active[i] { (omega * times[i]).sin_cos() } else { (0.0, 0.0) };
            m.row_mut(i)
                .copy_from_slice(&[plane.n.x, plane.n.y, plane.n.z, s, c]);
            rhs[i] = -plane.d;
        }
        let svd = m.clone().svd(true, true);
        let eps = eps_rel * svd.singular_values.max();
        let x = svd.solve(&rhs, eps).expect("requested U and V^T");
        let sse = (&m * &x - &rhs).norm_squared();
        (sse, x)
    };

    // Drive-locked pulses are unevenly spaced, so the usable band reaches
    // past the mean-rate Nyquist; cap at the median-gap pseudo-Nyquist.
    let mut gaps: Vec<f64> = active_times.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let f_max = 0.5 / gaps[gaps.len() / 2].max(span * 1e-6);
    let step = 0.25 / span;
    let mut best = (f64::INFINITY, 1.0 / span);
    let mut f_hz = 1.0 / span;
    while f_hz <= f_max {
        let (sse, _) = solve_at(f_hz);
        if sse < best.0 {
            best = (sse, f_hz);
        }
        f_hz += step;
    }
    // Parabolic vertex through the best grid cell and its neighbors.
    let (sa, sb, sc) = (
        solve_at(best.1 - step).0,
        best.0,
        solve_at(best.1 + step).0,
    );
    let denom = sa - 2.0 * sb + sc;
    if denom > 0.0 {
        let vertex = best.1 + 0.5 * step * (sa - sc) / denom;
        let (sse, _) = solve_at(vertex);
        if sse < best.0 {
            best = (sse, vertex);
        }
    }

    let (_, x) = solve_at(best.1);
    Ok(OriginFit {
        origin: Point3::new(x[0], x[1], x[2]),
        piston_amp_mm: x[3].hypot(x[4]),
        piston_hz: best.1,
        ambiguous,
    })
}

/// Recovers the home frame from per-pulse planes, segment tags, and times.
///
/// The home plane averages the home-segment planes (normals made
/// orientation-consistent first); the fast axis comes from the home and
/// fast-only normals; the pivot from all planes, solved jointly with a
/// piston sinusoid over the two-axis pulse times unless `model_piston` is
/// off. The returned rotation has the fast axis re-orthogonalized against
/// the home normal, with the original misalignment reported in
/// `axis_normal_dot`.
pub fn estimate_home_frame(
    planes: &[PlaneH],
    segments: &[ScanSegment],
    times: &[f64],
    opts: &FrameOptions,
) -> Result<HomeFrame, FrameError> {
    if planes.len() != segments.len() {
        return Err(FrameError::MismatchedLengths {
            planes: planes.len(),
            segments: segments.len(),
        });
    }
    if planes.len() != times.len() {
        return Err(FrameError::MismatchedTimes {
            planes: planes.len(),
            times: times.len(),
        });
    }
    let home: Vec<&PlaneH> = planes
        .iter()
        .zip(segments)
        .filter(|(_, s)| **s == ScanSegment::Home)
        .map(|(p, _)| p)
        .collect();
    if home.is_empty() {
        return Err(FrameError::NoHomePulses);
    }
    let axis_set: Vec<&PlaneH> = planes
        .iter()
        .zip(segments)
        .filter(|(_, s)| matches!(s, ScanSegment::Home | ScanSegment::FastOnly))
        .map(|(p, _)| p)
        .collect();

    // Rest plane: average of the home pulses.
    let home_normals = consistent_normals(&home);
    let mut n_sum = Vector3::zeros();
    let mut d_sum = 0.0;
    for (n, plane) in home_normals.iter().zip(&home) {
        // d flips with the normal when made consistent.
        let d = if n.dot(&plane.n) < 0.0 { -plane.d } else { plane.d };
        n_sum += n;
        d_sum += d;
    }
    let home_plane = PlaneH::new(n_sum, d_sum / home.len() as f64)?;

    let axis_normals = consistent_normals(&axis_set);
    let axis = estimate_fast_axis(&axis_normals)?;

    let all: Vec<&PlaneH> = planes.iter().collect();
    let fit = if opts.model_piston {
        let active: Vec<bool> =
            segments.iter().map(|s| *s == ScanSegment::TwoAxis).collect();
        estimate_origin_with_piston(&all, times, &active, opts.allow_ambiguous_origin)?
    } else {
        let (origin, ambiguous) = estimate_origin(&all, opts.allow_ambiguous_origin)?;
        OriginFit { origin, piston_amp_mm: 0.0, piston_hz: 0.0, ambiguous }
    };

    // Home normal pointing away from the board (toward the beam source side):
    // sign chosen so the pivot-to-board direction is consistent; callers that
    // know the beam direction should orient the plane first. Here the normal
    // keeps the averaged orientation.
    let n0 = home_plane.n;
    let axis_normal_dot = axis.dot(&n0).abs();
    let e_f = first_nonzero_positive((axis - axis.dot(&n0) * n0).normalize());
    let e_y = n0.cross(&e_f);
    let r0 = Matrix3::from_columns(&[e_f, e_y, n0]);

    Ok(HomeFrame {
        r0,
        origin: fit.origin,
        home_plane,
        axis_normal_dot,
        origin_ambiguous: fit.ambiguous,
        piston_amp_mm: fit.piston_amp_mm,
        piston_hz: fit.piston_hz,
    })
}

impl HomeFrame {
    /// Expresses a world-frame plane in the home frame {F}.
    ///
    /// {F} has axes `r0` and origin `origin`: X_W = R₀·X_F + X_O, so
    /// n_F = R₀ᵀ·n_W and d_F = d_W + n_Wᵀ·X_O. The result is oriented with
    /// n_z > 0 so the pose decomposition applies.
    pub fn to_home_plane(&self, plane_w: &PlaneH) -> PlaneH {
        let n_f = self.r0.transpose() * plane_w.n;
        let d_f = plane_w.d + plane_w.n.dot(&self.origin.coords);
        let out = PlaneH { n: n_f, d: d_f };
        if out.n.z < 0.0 { out.flipped() } else { out }
    }

    /// Decomposes a world-frame mirror plane into its home-frame pose.
    pub fn mirror_pose(&self, plane_w: &PlaneH) -> Result<MirrorPose, FrameError> {
        let p = self.to_home_plane(plane_w);
        if p.n.z.abs() < 1e-9 {
            return Err(FrameError::PoseOutOfRange { nz: p.n.z });
        }
        let alpha = (-p.n.y).atan2(p.n.z);
        let beta = p.n.x.clamp(-1.0, 1.0).asin();
        let d = -p.d / p.n.z;
        Ok(MirrorPose { alpha_rad: alpha, beta_rad: beta, d_mm: d })
    }

    /// Rebuilds the world-frame plane of a home-frame pose.
    pub fn pose_plane_world(&self, pose: &MirrorPose) -> PlaneH {
        let p_f = pose.plane();
        let n_w = self.r0 * p_f.n;
        let d_w = p_f.d - n_w.dot(&self.origin.coords);
        PlaneH { n: n_w, d: d_w }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_exp;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_frame() -> (Matrix3<f64>, Point3<f64>) {
        let r0 = rotation_exp(&Vector3::new(0.3, -0.2, 0.75));
        let origin = Point3::new(42.0, -17.0, -230.0);
        (r0, origin)
    }

    /// Plane of a pose expressed directly in {W} from ground truth.
    fn pose_plane(r0: &Matrix3<f64>, origin: &Point3<f64>, pose: &MirrorPose) -> PlaneH {
        let p_f = pose.plane();
        let n_w = r0 * p_f.n;
        PlaneH { n: n_w, d: p_f.d - n_w.dot(&origin.coords) }
    }

    fn scan_set(
        r0: &Matrix3<f64>,
        origin: &Point3<f64>,
    ) -> (Vec<PlaneH>, Vec<ScanSegment>, Vec<f64>) {
        let mut planes = Vec::new();
        let mut segments = Vec::new();
        for _ in 0..3 {
            let pose = MirrorPose { alpha_rad: 0.0, beta_rad: 0.0, d_mm: 0.0 };
            planes.push(pose_plane(r0, origin, &pose));
            segments.push(ScanSegment::Home);
        }
        for i in 0..8 {
            let pose = MirrorPose {
                alpha_rad: 0.12 * ((i as f64) - 3.5) / 3.5,
                beta_rad: 0.0,
                d_mm: 0.0,
            };
            planes.push(pose_plane(r0, origin, &pose));
            segments.push(ScanSegment::FastOnly);
        }
        for i in 0..24 {
            let phase = i as f64 * 0.7;
            let pose = MirrorPose {
                alpha_rad: 0.1 * phase.sin(),
                beta_rad: 0.08 * (1.3 * phase).cos(),
                d_mm: 0.0,
            };
            planes.push(pose_plane(r0, origin, &pose));
            segments.push(ScanSegment::TwoAxis);
        }
        let times = (0..planes.len()).map(|j| 0.25 * j as f64).collect();
        (planes, segments, times)
    }

    #[test]
    fn recovers_exact_frame_from_clean_planes() {
        let (r0, origin) = make_frame();
        let (planes, segments, times) = scan_set(&r0, &origin);
        let frame =
            estimate_home_frame(&planes, &segments, &times, &FrameOptions::default())
                .unwrap();

        assert_abs_diff_eq!(frame.origin, origin, epsilon = 1e-6);
        // Fast axis up to sign.
        let truth_axis: Vector3<f64> = r0.column(0).into_owned();
        let dot = frame.r0.column(0).dot(&truth_axis).abs();
        assert!(dot > 1.0 - 1e-10, "axis dot {dot}");
        // Home normal up to sign.
        let truth_n: Vector3<f64> = r0.column(2).into_owned();
        assert!(frame.home_plane.n.dot(&truth_n).abs() > 1.0 - 1e-10);
        assert!(frame.axis_normal_dot < 1e-9);
        assert!(!frame.origin_ambiguous);
        assert!(frame.piston_amp_mm < 1e-6, "amp {}", frame.piston_amp_mm);
    }

    #[test]
    fn round_trips_mirror_poses() {
        let (r0, origin) = make_frame();
        let (planes, segments, times) = scan_set(&r0, &origin);
        let frame =
            estimate_home_frame(&planes, &segments, &times, &FrameOptions::default())
                .unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let pose = MirrorPose {
                alpha_rad: rng.gen_range(-0.3..0.3),
                beta_rad: rng.gen_range(-0.3..0.3),
                d_mm: rng.gen_range(-0.5..0.5),
            };
            let plane_w = frame.pose_plane_world(&pose);
            let back = frame.mirror_pose(&plane_w).unwrap();
            assert_abs_diff_eq!(back.alpha_rad, pose.alpha_rad, epsilon = 1e-12);
            assert_abs_diff_eq!(back.beta_rad, pose.beta_rad, epsilon = 1e-12);
            assert_abs_diff_eq!(back.d_mm, pose.d_mm, epsilon = 1e-9);
        }
    }

    #[test]
    fn pose_decomposition_matches_construction() {
        // n = R_X(α) R_Y(β) e₃ with a z-intercept at d.
        let pose = MirrorPose { alpha_rad: 0.07, beta_rad: -0.11, d_mm: 0.4 };
        let plane = pose.plane();
        assert_abs_diff_eq!(
            plane.n,
            Vector3::new(
                (-0.11_f64).sin(),
                -(0.07_f64).sin() * (0.11_f64).cos(),
                (0.07_f64).cos() * (0.11_f64).cos()
            ),
            epsilon = 1e-15
        );
        // The point (0, 0, d) lies on the plane.
        assert_abs_diff_eq!(
            plane.signed_distance(&Point3::new(0.0, 0.0, 0.4)),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn fast_only_scan_is_pencil_degenerate() {
        let (r0, origin) = make_frame();
        let mut planes = Vec::new();
        let mut segments = Vec::new();
        planes.push(pose_plane(&r0, &origin, &MirrorPose {
            alpha_rad: 0.0,
            beta_rad: 0.0,
            d_mm: 0.0,
        }));
        segments.push(ScanSegment::Home);
        for i in 0..10 {
            planes.push(pose_plane(&r0, &origin, &MirrorPose {
                alpha_rad: 0.02 * i as f64 - 0.1,
                beta_rad: 0.0,
                d_mm: 0.0,
            }));
            segments.push(ScanSegment::FastOnly);
        }
        let times: Vec<f64> = (0..planes.len()).map(|j| 0.25 * j as f64).collect();

        let strict =
            estimate_home_frame(&planes, &segments, &times, &FrameOptions::default());
        assert!(matches!(strict, Err(FrameError::PencilDegenerate { .. })));

        let relaxed = estimate_home_frame(
            &planes,
            &segments,
            &times,
            &FrameOptions { allow_ambiguous_origin: true, ..FrameOptions::default() },
        )
        .unwrap();
        assert!(relaxed.origin_ambiguous);
        // The reported point must lie on the true rotation axis.
        let axis_dir: Vector3<f64> = r0.column(0).into_owned();
        let axis = crate::geom::PluckerLine::from_point_dir(&origin, axis_dir).unwrap();
        assert!(axis.distance_to_point(&relaxed.origin) < 1e-6);
    }

    #[test]
    fn piston_displacement_stays_out_of_the_pivot() {
        // Sampled every 0.25 s, the 6.3 Hz slow tone aliases to 1.7 Hz,
        // right next to the 1.62 Hz piston, so over this window the piston
        // correlates strongly with the tilt pattern instead of averaging
        // out. That correlation is what drags a pivot solve that ignores
        // the piston.
        let (r0, origin) = make_frame();
        let mut planes = Vec::new();
        let mut segments = Vec::new();
        let mut times = Vec::new();
        for j in 0..12 {
            let t = 0.25 * j as f64;
            let (alpha, segment) = if j < 4 {
                (0.0, ScanSegment::Home)
            } else {
                (0.038 * (2.0 * std::f64::consts::PI * 5.0 * t + 0.4).sin(), ScanSegment::FastOnly)
            };
            planes.push(pose_plane(&r0, &origin, &MirrorPose {
                alpha_rad: alpha,
                beta_rad: 0.0,
                d_mm: 0.0,
            }));
            segments.push(segment);
            times.push(t);
        }
        for j in 0..64 {
            let t = 3.0 + 0.25 * j as f64;
            let w = 2.0 * std::f64::consts::PI;
            planes.push(pose_plane(&r0, &origin, &MirrorPose {
                alpha_rad: 0.038 * (w * 5.0 * t + 0.4).sin(),
                beta_rad: 0.15 * (w * 6.3 * t + 1.1).sin(),
                d_mm: 0.52 * (w * 1.62 * t).sin(),
            }));
            segments.push(ScanSegment::TwoAxis);
            times.push(t);
        }

        let plain = estimate_home_frame(
            &planes,
            &segments,
            &times,
            &FrameOptions { model_piston: false, ..FrameOptions::default() },
        )
        .unwrap();
        let modeled =
            estimate_home_frame(&planes, &segments, &times, &FrameOptions::default())
                .unwrap();

        let plain_err = (plain.origin - origin).norm();
        let modeled_err = (modeled.origin - origin).norm();
        assert!(plain_err > 0.2, "plain pivot error {plain_err}");
        assert!(modeled_err < 0.05, "modeled pivot error {modeled_err}");
        assert_abs_diff_eq!(modeled.piston_hz, 1.62, epsilon = 0.02);
        assert_abs_diff_eq!(modeled.piston_amp_mm, 0.52, epsilon = 0.02);
    }

    #[test]
    fn all_parallel_normals_reject_axis_fit() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let normals = vec![n, n, n, n];
        assert!(matches!(
            estimate_fast_axis(&normals),
            Err(FrameError::RankDeficientAxis { .. })
        ));
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let planes = vec![PlaneH { n: Vector3::z(), d: 0.0 }];
        let err = estimate_home_frame(&planes, &[], &[0.0], &FrameOptions::default());
        assert!(matches!(err, Err(FrameError::MismatchedLengths { .. })));
        let err =
            estimate_home_frame(&planes, &[ScanSegment::Home], &[], &FrameOptions::default());
        assert!(matches!(err, Err(FrameError::MismatchedTimes { .. })));
    }

    #[test]
    fn missing_home_segment_is_rejected() {
        let planes = vec![PlaneH { n: Vector3::z(), d: 0.0 }];
        let err = estimate_home_frame(
            &planes,
            &[ScanSegment::TwoAxis],
            &[0.0],
            &FrameOptions::default(),
        );
        assert!(matches!(err, Err(FrameError::NoHomePulses)));
    }
}
