//! Incident-beam reconstruction from sliding-board captures.
//!
//! A checkerboard slides through the beams; each capture images both the
//! static world board and the sliding board, so PnP gives the sliding-plane
//! pose and the dots on it triangulate to 3D. Collecting the dot positions
//! across captures and fitting a line per beam yields each incident beam as
//! a Plücker line in the world frame.

use nalgebra::{DMatrix, Point3, Vector3};

use crate::camera::{
    backproject_to_plane, solve_pnp, CameraError, CheckerboardSpec, CornerObservation, ImagePoint,
    Intrinsics, PnpResult,
};
use crate::geom::{PlaneH, PluckerLine, RigidTransformMin};

/// One sliding-board capture: corners of both boards plus the laser dots.
#[derive(Debug, Clone)]
pub struct SlidingCapture {
    /// Capture index, ordered along the slide from the source toward the mirror.
    pub l: usize,
    /// World-board corners in this image.
    pub world_corners: Vec<CornerObservation>,
    /// Sliding-board corners in this image.
    pub sliding_corners: Vec<CornerObservation>,
    /// Laser dots on the sliding board: (beam id, measurement).
    pub dots: Vec<(usize, ImagePoint)>,
}

/// A reconstructed beam with its fit diagnostics.
#[derive(Debug, Clone)]
pub struct BeamEstimate {
    /// Stable beam id from the dataset.
    pub beam_id: usize,
    /// The beam in the world frame, directed source → mirror.
    pub line: PluckerLine,
    /// RMS perpendicular distance of the triangulated dots (mm).
    pub rms_mm: f64,
    /// Ratio of the second to first singular value of the centered dots.
    pub sv_ratio: f64,
    /// Triangulated dot positions in {W}, in capture order.
    pub points_w: Vec<Point3<f64>>,
}

/// Full result of the sliding-capture stage.
#[derive(Debug, Clone)]
pub struct BeamReconstruction {
    /// World-to-camera-1 extrinsics (shared by every capture).
    pub t_c1_w: RigidTransformMin,
    /// PnP diagnostics for the world-board solve.
    pub pnp_world: PnpResult,
    /// Sliding-board extrinsics per capture, in input order.
    pub t_c1_sl: Vec<RigidTransformMin>,
    /// Beams sorted by beam id.
    pub beams: Vec<BeamEstimate>,
}

/// Errors from beam reconstruction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BeamError {
    /// Line fit with fewer than two (distinct) points.
    #[error("line fit needs at least 2 distinct points, got {got}")]
    TooFewPoints { got: usize },
    /// Points do not concentrate along a line.
    #[error("points are not line-like (singular value ratio {sv_ratio:.3} > 0.5)")]
    DegenerateLine { sv_ratio: f64 },
    /// Light-path normal of a point lying on the line itself.
    #[error("point lies on the line (distance {distance:.3e} mm): retroreflection degeneracy")]
    PointOnLine { distance: f64 },
    /// A beam seen in fewer than two captures cannot be triangulated.
    #[error("beam {beam_id} appears in only {got} capture(s), need at least 2")]
    InsufficientCaptures { beam_id: usize, got: usize },
    /// PnP or back-projection failure.
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// A PCA line fit with its diagnostics.
#[derive(Debug, Clone)]
pub struct LineFit {
    /// The fitted line; direction points from the first input toward the last.
    pub line: PluckerLine,
    /// RMS perpendicular residual (mm).
    pub rms_mm: f64,
    /// σ₂/σ₁ of the centered point cloud; small means line-like.
    pub sv_ratio: f64,
}

/// Principal-component line fit.
///
/// The direction is the first right-singular vector of the centered points;
/// its sign is canonicalized to point from the first input point toward the
/// last (the propagation direction when inputs are in slide order). The
/// moment is m = v × centroid.
pub fn fit_line_pca(points: &[Point3<f64>]) -> Result<LineFit, BeamError> {
    if points.len() < 2 {
        return Err(BeamError::TooFewPoints { got: points.len() });
    }
    let centroid: Vector3<f64> =
        points.iter().map(|p| p.coords).sum::<Vector3<f64>>() / points.len() as f64;
    let mut centered = DMatrix::<f64>::zeros(points.len(), 3);
    for (i, p) in points.iter().enumerate() {
        centered.row_mut(i).copy_from_slice(&[
            p.x - centroid.x,
            p.y - centroid.y,
            p.z - centroid.z,
        ]);
    }
    let svd = centered.svd(false, true);
    let sv = &svd.singular_values;
    if sv[0] < 1e-9 {
        return Err(BeamError::TooFewPoints { got: 1 });
    }
    let sv_ratio = sv[1] / sv[0];
    if sv_ratio > 0.5 {
        return Err(BeamError::DegenerateLine { sv_ratio });
    }
    let v_t = svd.v_t.as_ref().expect("svd computed with V^T");
    let mut v = Vector3::new(v_t[(0, 0)], v_t[(0, 1)], v_t[(0, 2)]);
    let span = points[points.len() - 1] - points[0];
    if v.dot(&span) < 0.0 {
        v = -v;
    }
    let line = PluckerLine { v, m: v.cross(&centroid) };
    let rms_mm = (points.iter().map(|p| line.residual(p).norm_squared()).sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(LineFit { line, rms_mm, sv_ratio })
}

/// Unit normal of the light-path plane spanned by a line and an off-line
/// point: normalize(v × X − m), sign canonicalized (first nonzero component
/// positive).
pub fn lightpath_normal(line: &PluckerLine, x: &Point3<f64>) -> Result<Vector3<f64>, BeamError> {
    let r = line.residual(x);
    let norm = r.norm();
    if norm <= 1e-9 {
        return Err(BeamError::PointOnLine { distance: norm });
    }
    let mut n = r / norm;
    for k in 0..3 {
        if n[k].abs() > 1e-12 {
            if n[k] < 0.0 {
                n = -n;
            }
            break;
        }
    }
    Ok(n)
}

/// Reconstructs every beam from the sliding captures.
///
/// World extrinsics come from a single PnP over the world corners of all
/// captures (both are static); each capture gets its own sliding-board PnP.
/// Dots are back-projected onto the sliding plane, expressed in {W}, and fit
/// per beam with [`fit_line_pca`].
pub fn reconstruct_beams(
    captures: &[SlidingCapture],
    world_board: &CheckerboardSpec,
    sliding_board: &CheckerboardSpec,
    k: &Intrinsics,
) -> Result<BeamReconstruction, BeamError> {
    if captures.len() < 2 {
        return Err(BeamError::InsufficientCaptures {
            beam_id: usize::MAX,
            got: captures.len(),
        });
    }

    let all_world: Vec<CornerObservation> =
        captures.iter().flat_map(|c| c.world_corners.iter().copied()).collect();
    let pnp_world = solve_pnp(&all_world, world_board, k)?;
    let t_c1_w = pnp_world.t;

    let board_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let mut t_c1_sl = Vec::with_capacity(captures.len());
    let mut per_beam: std::collections::BTreeMap<usize, Vec<Point3<f64>>> =
        std::collections::BTreeMap::new();
    for capture in captures {
        let pnp_sl = solve_pnp(&capture.sliding_corners, sliding_board, k)?;
        for &(beam_id, dot) in &capture.dots {
            let x_sl = backproject_to_plane(&dot, &pnp_sl.t, k, &board_plane)?;
            let x_c1 = pnp_sl.t.transform_point(&x_sl);
            let x_w = t_c1_w.inverse_transform_point(&x_c1);
            per_beam.entry(beam_id).or_default().push(x_w);
        }
        t_c1_sl.push(pnp_sl.t);
    }

    let mut beams = Vec::with_capacity(per_beam.len());
    for (beam_id, points_w) in per_beam {
        if points_w.len() < 2 {
            return Err(BeamError::InsufficientCaptures { beam_id, got: points_w.len() });
        }
        let fit = fit_line_pca(&points_w)?;
        beams.push(BeamEstimate {
            beam_id,
            line: fit.line,
            rms_mm: fit.rms_mm,
            sv_ratio: fit.sv_ratio,
            points_w,
        });
    }
    Ok(BeamReconstruction { t_c1_w, pnp_world, t_c1_sl, beams })
}
