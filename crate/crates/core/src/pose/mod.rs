//! Per-pulse mirror-plane estimation.
//!
//! Each laser pulse produces one reflected dot per beam on the world board.
//! The closed-form stage ([`init_mirror_plane`]) inverts the two-beam
//! reflection principle: the mirror normal is the cross product of the two
//! light-path plane normals, and the real/virtual midpoint of one dot fixes
//! the offset. The joint stage ([`solve_mle`]) refines every mirror plane,
//! beam line, and extrinsic transform together by maximum likelihood over
//! whitened reprojection residuals, returning the estimate covariance.
//!
//! Validation holds one beam out of the fit and predicts its dots
//! ([`predict_heldout`]), with a first-order error variance combining the
//! estimate covariance and measurement noise.

mod baseline;
mod init;
mod predict;
mod residual;
mod solve;

pub use baseline::{baseline_predict_dot, baseline_pure_rotation};
pub use init::{init_mirror_plane, init_state, init_state_with, BeamStageInit};
pub use predict::{
    local_mm_per_px, normalized_errors, pixel_error_to_angle_deg, predict_heldout,
    HeldoutPrediction,
};
pub use residual::{cost_cl, cost_cp, cost_cr, fl_eval, fp_eval, fr_eval, FlEval, FrEval};
pub use solve::{solve_mle, MleSolution, SolveOptions, SolveReport, StateLayout};

use nalgebra::{Matrix3, Point3};
use serde::{Deserialize, Serialize};

use crate::beam::{BeamError, SlidingCapture};
use crate::camera::{CameraError, CheckerboardSpec, CornerObservation, ImagePoint, Intrinsics};
use crate::geom::{GeomError, LineMin, PlaneH, PlaneMin, RigidTransformMin};

/// A laser dot in a scan image: which beam, which pulse, when, where.
#[derive(Debug, Clone, Copy)]
pub struct ScanDot {
    /// Beam id (matches the sliding-capture beam ids).
    pub beam_id: usize,
    /// Pulse index j, shared by the dots of all beams triggered together.
    pub pulse: usize,
    /// Pulse time on the camera/trigger clock (s).
    pub t_s: f64,
    /// Image measurement.
    pub point: ImagePoint,
}

/// One scan image: world-board corners plus the reflected dots it captured.
#[derive(Debug, Clone)]
pub struct ScanFrame {
    /// Image index.
    pub k: usize,
    /// World-board corners in this image.
    pub corners: Vec<CornerObservation>,
    /// Reflected laser dots.
    pub dots: Vec<ScanDot>,
}

/// Everything the joint estimator consumes.
#[derive(Debug, Clone)]
pub struct MleData {
    /// Shared camera intrinsics.
    pub k: Intrinsics,
    /// World-board geometry.
    pub world_board: CheckerboardSpec,
    /// Sliding-board geometry.
    pub sliding_board: CheckerboardSpec,
    /// Sliding-stage captures (beam reconstruction observations).
    pub captures: Vec<SlidingCapture>,
    /// Scan-stage frames (reflected-dot observations).
    pub frames: Vec<ScanFrame>,
}

impl MleData {
    /// Pulse times in index order, taken from the first dot of each pulse.
    pub fn pulse_times(&self) -> Vec<f64> {
        let mut times: Vec<(usize, f64)> = Vec::new();
        for frame in &self.frames {
            for dot in &frame.dots {
                if !times.iter().any(|(j, _)| *j == dot.pulse) {
                    times.push((dot.pulse, dot.t_s));
                }
            }
        }
        times.sort_by(|a, b| a.0.cmp(&b.0));
        times.into_iter().map(|(_, t)| t).collect()
    }

    /// Number of pulses (max pulse index + 1).
    pub fn pulse_count(&self) -> usize {
        self.frames
            .iter()
            .flat_map(|f| f.dots.iter().map(|d| d.pulse + 1))
            .max()
            .unwrap_or(0)
    }

    /// Beam ids present in the scan dots, ascending.
    pub fn scan_beam_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> =
            self.frames.iter().flat_map(|f| f.dots.iter().map(|d| d.beam_id)).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Copy with one beam's dots removed everywhere (hold-out evaluation).
    pub fn without_beam(&self, beam_id: usize) -> MleData {
        let mut out = self.clone();
        for capture in &mut out.captures {
            capture.dots.retain(|(id, _)| *id != beam_id);
        }
        for frame in &mut out.frames {
            frame.dots.retain(|d| d.beam_id != beam_id);
        }
        out
    }
}

/// The full optimization state: plane chart per pulse, line chart per beam,
/// and the extrinsic transforms.
#[derive(Debug, Clone)]
pub struct CalibState {
    /// Mirror plane chart per pulse index.
    pub planes: Vec<PlaneMin>,
    /// Beam line chart per entry of `beam_ids`.
    pub beams: Vec<LineMin>,
    /// Beam ids corresponding to `beams`, ascending.
    pub beam_ids: Vec<usize>,
    /// World → camera 1.
    pub t_c1_w: RigidTransformMin,
    /// World → camera 2.
    pub t_c2_w: RigidTransformMin,
    /// Sliding board l → camera 1, in capture order.
    pub t_c1_sl: Vec<RigidTransformMin>,
}

impl CalibState {
    /// Index into `beams` for a beam id.
    pub fn beam_index(&self, beam_id: usize) -> Option<usize> {
        self.beam_ids.iter().position(|&id| id == beam_id)
    }

    /// Total chart dimension: 3 per plane, 4 per beam, 6 per transform.
    pub fn dim(&self) -> usize {
        3 * self.planes.len() + 4 * self.beams.len() + 6 * (2 + self.t_c1_sl.len())
    }
}

/// One estimated mirror plane with covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseEstimate {
    /// Pulse index.
    pub pulse: usize,
    /// Pulse time (s).
    pub t_s: f64,
    /// The mirror plane in {W}.
    pub plane: PlaneH,
    /// 3×3 covariance over the plane chart coordinates.
    pub cov: Matrix3<f64>,
}

/// Errors from pose estimation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoseError {
    /// Light-path normals too close to parallel to span the mirror normal.
    #[error("degenerate spanning angle: |n1 × n2| = {sin_angle:.3e} below sin(1°)")]
    DegenerateSpanningAngle { sin_angle: f64 },
    /// A reflected dot lies on its incident beam.
    #[error("retroreflection: dot is {distance:.3e} mm from the incident beam line")]
    Retroreflection { distance: f64 },
    /// Closest-point fallback between skew lines exceeded its tolerance.
    #[error("real/virtual intersection gap {gap_mm:.3} mm exceeds 1 mm")]
    SkewLines { gap_mm: f64 },
    /// The damped normal equations could not be factorized at any tried damping.
    #[error("normal equations are singular")]
    SingularNormalEquations,
    /// A pulse lacks the two beam observations the principle needs.
    #[error("pulse {pulse} has {got} beam observation(s), need at least 2")]
    MissingBeams { pulse: usize, got: usize },
    /// State and dataset dimensions disagree.
    #[error("inconsistent state/dataset: {detail}")]
    Inconsistent { detail: String },
    /// Geometry failure inside a residual or init step.
    #[error(transparent)]
    Geom(#[from] GeomError),
    /// Camera-side failure (projection, PnP).
    #[error(transparent)]
    Camera(#[from] CameraError),
    /// Beam reconstruction failure.
    #[error(transparent)]
    Beam(#[from] BeamError),
}

/// Per-pulse spanning angle between the two light-path normals, plus the mean.
#[derive(Debug, Clone)]
pub struct SpanningAngleStats {
    /// θ per pulse (degrees, in (0, 90]).
    pub per_pulse_deg: Vec<f64>,
    /// Mean over pulses (degrees).
    pub mean_deg: f64,
}

/// Spanning angle θ per pulse between the light-path plane normals of the
/// first two beams, computed from the state's own geometry (beam lines
/// reflected off the estimated planes onto the world plane).
pub fn spanning_angle_stats(
    state: &CalibState,
    data: &MleData,
) -> Result<SpanningAngleStats, PoseError> {
    use crate::beam::lightpath_normal;
    use crate::geom::{line_plane_intersect, reflection_matrix, reflect_line};

    let world_plane = PlaneH { n: nalgebra::Vector3::z(), d: 0.0 };
    let n_pulses = state.planes.len();
    let mut beams_at_pulse: Vec<Vec<usize>> = vec![Vec::new(); n_pulses];
    for frame in &data.frames {
        for dot in &frame.dots {
            if let Some(b) = state.beam_index(dot.beam_id) {
                if !beams_at_pulse[dot.pulse].contains(&b) {
                    beams_at_pulse[dot.pulse].push(b);
                }
            }
        }
    }

    let mut per_pulse_deg = Vec::with_capacity(n_pulses);
    for (j, beam_idxs) in beams_at_pulse.iter().enumerate() {
        if beam_idxs.len() < 2 {
            return Err(PoseError::MissingBeams { pulse: j, got: beam_idxs.len() });
        }
        let plane = state.planes[j].to_plane()?;
        let h = reflection_matrix(&plane);
        let mut normals = Vec::with_capacity(2);
        for &b in beam_idxs.iter().take(2) {
            let line = state.beams[b].to_line();
            let reflected = reflect_line(&line, &h);
            let dot_w: Point3<f64> = line_plane_intersect(&reflected, &world_plane)?;
            normals.push(lightpath_normal(&line, &dot_w)?);
        }
        let cos = normals[0].dot(&normals[1]).abs();
        if cos >= 1.0 - 1e-12 {
            return Err(PoseError::DegenerateSpanningAngle { sin_angle: 0.0 });
        }
        per_pulse_deg.push(cos.clamp(-1.0, 1.0).acos().to_degrees());
    }
    let mean_deg = per_pulse_deg.iter().sum::<f64>() / per_pulse_deg.len() as f64;
    Ok(SpanningAngleStats { per_pulse_deg, mean_deg })
}
