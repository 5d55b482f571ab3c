//! On-disk dataset schemas and conversions.
//!
//! A dataset is a directory of plain files: `scene.json` for the rig
//! geometry, `beams.json` for the sliding-stage captures, `scan.json` for
//! the scan frames, `hall_actual.csv` and `hall_background.csv` for the
//! sensor logs, and optionally `ground_truth.json` when the data came from
//! the simulator. Estimator stages add `beams_est.json`, `poses.json`, and
//! `hallmodel.json` next to them.
//!
//! File values use degrees, millimetres, and seconds with units embedded in
//! field names; conversions to the crate's internal radians happen here.
//! Matrices are written row-major.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Point3, Vector3};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::beam::{BeamReconstruction, SlidingCapture};
use crate::camera::{CornerObservation, ImagePoint};
use crate::frame::{HomeFrame, MirrorPose, ScanSegment};
use crate::geom::{GeomError, PlaneH, PluckerLine, RigidTransformMin};
use crate::hall::{EvalReport, HallModel, HallModelKind, HallSeries};
use crate::pose::{HeldoutPrediction, PoseEstimate, ScanDot, ScanFrame};
use crate::sim::{GroundTruth, SyntheticDataset};

/// Errors from dataset I/O.
#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    /// Filesystem failure.
    #[error("{path}: {source}")]
    Io {
        /// Offending file.
        path: PathBuf,
        /// Underlying error.
        source: std::io::Error,
    },
    /// Malformed JSON or CSV.
    #[error("{path}: {detail}")]
    Parse {
        /// Offending file.
        path: PathBuf,
        /// What went wrong, with location when available.
        detail: String,
    },
    /// Well-formed file with inconsistent content.
    #[error("{path}: {detail}")]
    Schema {
        /// Offending file.
        path: PathBuf,
        /// Which invariant failed.
        detail: String,
    },
    /// Value conversion failure.
    #[error("{path}: {source}")]
    Geom {
        /// Offending file.
        path: PathBuf,
        /// Underlying error.
        source: GeomError,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.into(),
        detail: e.to_string(),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DatasetError::Parse {
        path: path.into(),
        detail: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
        path: path.into(),
        source,
    })
}

fn mat3_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ]
}

fn mat3_from_rows(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_rows(&[
        nalgebra::RowVector3::new(rows[0][0], rows[0][1], rows[0][2]),
        nalgebra::RowVector3::new(rows[1][0], rows[1][1], rows[1][2]),
        nalgebra::RowVector3::new(rows[2][0], rows[2][1], rows[2][2]),
    ])
}

fn vec3(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

// ---------------------------------------------------------------------------
// Observation files: beams.json and scan.json.

/// One measured image point with its pixel covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImagePointRecord {
    /// Horizontal pixel coordinate.
    pub u_px: f64,
    /// Vertical pixel coordinate.
    pub v_px: f64,
    /// 2×2 pixel covariance, row-major.
    pub cov_px2: [[f64; 2]; 2],
}

impl ImagePointRecord {
    fn from_point(p: &ImagePoint) -> Self {
        Self {
            u_px: p.u,
            v_px: p.v,
            cov_px2: [
                [p.cov[(0, 0)], p.cov[(0, 1)]],
                [p.cov[(1, 0)], p.cov[(1, 1)]],
            ],
        }
    }

    fn to_point(&self) -> ImagePoint {
        ImagePoint {
            u: self.u_px,
            v: self.v_px,
            cov: Matrix2::new(
                self.cov_px2[0][0],
                self.cov_px2[0][1],
                self.cov_px2[1][0],
                self.cov_px2[1][1],
            ),
        }
    }
}

/// One detected checkerboard corner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CornerRecord {
    /// Corner id, row-major over the board grid.
    pub id: usize,
    /// Measurement.
    #[serde(flatten)]
    pub point: ImagePointRecord,
}

/// One laser dot on the sliding board.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureDotRecord {
    /// Beam id.
    pub beam_id: usize,
    /// Measurement.
    #[serde(flatten)]
    pub point: ImagePointRecord,
}

/// One sliding-stage capture.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaptureRecord {
    /// Capture index along the slide.
    pub l: usize,
    /// World-board corners.
    pub world_corners: Vec<CornerRecord>,
    /// Sliding-board corners.
    pub sliding_corners: Vec<CornerRecord>,
    /// Beam dots.
    pub dots: Vec<CaptureDotRecord>,
}

/// `beams.json`: the sliding-stage captures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamsFile {
    /// Captures in slide order.
    pub captures: Vec<CaptureRecord>,
}

/// One reflected laser dot in a scan frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanDotRecord {
    /// Beam id.
    pub beam_id: usize,
    /// Pulse index.
    pub pulse: usize,
    /// Trigger time (s).
    pub t_s: f64,
    /// Measurement.
    #[serde(flatten)]
    pub point: ImagePointRecord,
}

/// One scan frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    /// Frame index, equal to the pulse index.
    pub k: usize,
    /// Drive segment the pulse belongs to.
    pub segment: ScanSegment,
    /// World-board corners.
    pub corners: Vec<CornerRecord>,
    /// Reflected dots.
    pub dots: Vec<ScanDotRecord>,
}

/// `scan.json`: the scan-stage frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanFile {
    /// Frames in pulse order.
    pub frames: Vec<FrameRecord>,
}

fn corners_to_records(corners: &[CornerObservation]) -> Vec<CornerRecord> {
    corners
        .iter()
        .map(|c| CornerRecord {
            id: c.id,
            point: ImagePointRecord::from_point(&c.point),
        })
        .collect()
}

fn corners_from_records(records: &[CornerRecord]) -> Vec<CornerObservation> {
    records
        .iter()
        .map(|r| CornerObservation {
            id: r.id,
            point: r.point.to_point(),
        })
        .collect()
}

impl BeamsFile {
    /// Packs captures for writing.
    pub fn from_captures(captures: &[SlidingCapture]) -> Self {
        Self {
            captures: captures
                .iter()
                .map(|c| CaptureRecord {
                    l: c.l,
                    world_corners: corners_to_records(&c.world_corners),
                    sliding_corners: corners_to_records(&c.sliding_corners),
                    dots: c
                        .dots
                        .iter()
                        .map(|(beam_id, p)| CaptureDotRecord {
                            beam_id: *beam_id,
                            point: ImagePointRecord::from_point(p),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Unpacks captures for estimation.
    pub fn to_captures(&self) -> Vec<SlidingCapture> {
        self.captures
            .iter()
            .map(|c| SlidingCapture {
                l: c.l,
                world_corners: corners_from_records(&c.world_corners),
                sliding_corners: corners_from_records(&c.sliding_corners),
                dots: c
                    .dots
                    .iter()
                    .map(|d| (d.beam_id, d.point.to_point()))
                    .collect(),
            })
            .collect()
    }
}

impl ScanFile {
    /// Packs frames and their segment tags for writing.
    pub fn from_frames(frames: &[ScanFrame], segments: &[ScanSegment]) -> Self {
        Self {
            frames: frames
                .iter()
                .map(|f| FrameRecord {
                    k: f.k,
                    segment: segments.get(f.k).copied().unwrap_or(ScanSegment::TwoAxis),
                    corners: corners_to_records(&f.corners),
                    dots: f
                        .dots
                        .iter()
                        .map(|d| ScanDotRecord {
                            beam_id: d.beam_id,
                            pulse: d.pulse,
                            t_s: d.t_s,
                            point: ImagePointRecord::from_point(&d.point),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Unpacks frames and segment tags for estimation.
    pub fn to_frames(&self) -> (Vec<ScanFrame>, Vec<ScanSegment>) {
        let frames = self
            .frames
            .iter()
            .map(|f| ScanFrame {
                k: f.k,
                corners: corners_from_records(&f.corners),
                dots: f
                    .dots
                    .iter()
                    .map(|d| ScanDot {
                        beam_id: d.beam_id,
                        pulse: d.pulse,
                        t_s: d.t_s,
                        point: d.point.to_point(),
                    })
                    .collect(),
            })
            .collect();
        let segments = self.frames.iter().map(|f| f.segment).collect();
        (frames, segments)
    }
}

// ---------------------------------------------------------------------------
// Rigid transforms and ground truth.

/// A rigid transform, rotation row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformRecord {
    /// Rotation matrix rows.
    pub r: [[f64; 3]; 3],
    /// Translation (mm).
    pub t_mm: [f64; 3],
}

impl TransformRecord {
    /// Packs a transform.
    pub fn from_transform(t: &RigidTransformMin) -> Self {
        Self {
            r: mat3_rows(&t.rotation()),
            t_mm: vec3(&t.t),
        }
    }

    /// Unpacks, re-orthonormalizing through the rotation chart.
    pub fn to_transform(&self, path: &Path) -> Result<RigidTransformMin, DatasetError> {
        let r = mat3_from_rows(&self.r);
        RigidTransformMin::from_rt(&r, Vector3::new(self.t_mm[0], self.t_mm[1], self.t_mm[2]))
            .map_err(|source| DatasetError::Geom { path: path.into(), source })
    }
}

/// A beam line in Plücker coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamLineRecord {
    /// Beam id.
    pub id: usize,
    /// Unit direction.
    pub v: [f64; 3],
    /// Moment (mm).
    pub m_mm: [f64; 3],
}

impl BeamLineRecord {
    /// Packs a beam line.
    pub fn from_line(id: usize, line: &PluckerLine) -> Self {
        Self { id, v: vec3(&line.v), m_mm: vec3(&line.m) }
    }

    /// Unpacks and re-normalizes.
    pub fn to_line(&self, path: &Path) -> Result<PluckerLine, DatasetError> {
        PluckerLine::new(
            Vector3::new(self.v[0], self.v[1], self.v[2]),
            Vector3::new(self.m_mm[0], self.m_mm[1], self.m_mm[2]),
        )
        .map_err(|source| DatasetError::Geom { path: path.into(), source })
    }
}

/// A mirror pose in the home frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PoseRecord {
    /// Fast-axis tilt (deg).
    pub alpha_deg: f64,
    /// Slow-axis tilt (deg).
    pub beta_deg: f64,
    /// Piston displacement (mm).
    pub d_mm: f64,
}

impl PoseRecord {
    /// Packs a pose, converting to degrees.
    pub fn from_pose(p: &MirrorPose) -> Self {
        Self {
            alpha_deg: p.alpha_rad.to_degrees(),
            beta_deg: p.beta_rad.to_degrees(),
            d_mm: p.d_mm,
        }
    }

    /// Unpacks a pose, converting to radians.
    pub fn to_pose(&self) -> MirrorPose {
        MirrorPose {
            alpha_rad: self.alpha_deg.to_radians(),
            beta_rad: self.beta_deg.to_radians(),
            d_mm: self.d_mm,
        }
    }
}

/// A plane in {W}.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PlaneRecord {
    /// Unit normal.
    pub n: [f64; 3],
    /// Offset (mm): n·X + d = 0.
    pub d_mm: f64,
}

impl PlaneRecord {
    /// Packs a plane.
    pub fn from_plane(p: &PlaneH) -> Self {
        Self { n: vec3(&p.n), d_mm: p.d }
    }

    /// Unpacks and re-normalizes.
    pub fn to_plane(&self, path: &Path) -> Result<PlaneH, DatasetError> {
        PlaneH::new(Vector3::new(self.n[0], self.n[1], self.n[2]), self.d_mm)
            .map_err(|source| DatasetError::Geom { path: path.into(), source })
    }
}

/// The home frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomeFrameRecord {
    /// Home-frame axes as world columns, row-major.
    pub r0: [[f64; 3]; 3],
    /// Frame origin (mm).
    pub origin_mm: [f64; 3],
    /// Mirror plane at rest.
    pub home_plane: PlaneRecord,
    /// Fast axis in {W} (first column of r0).
    pub fast_axis: [f64; 3],
    /// |axis · home normal| diagnostic.
    pub axis_normal_dot: f64,
    /// True when the origin came from a degenerate plane pencil.
    pub origin_ambiguous: bool,
    /// Piston amplitude fitted by the pivot solve (mm).
    pub piston_amp_mm: f64,
    /// Piston frequency fitted by the pivot solve (Hz).
    pub piston_hz: f64,
}

impl HomeFrameRecord {
    /// Packs a home frame.
    pub fn from_frame(h: &HomeFrame) -> Self {
        Self {
            r0: mat3_rows(&h.r0),
            origin_mm: [h.origin.x, h.origin.y, h.origin.z],
            home_plane: PlaneRecord::from_plane(&h.home_plane),
            fast_axis: [h.r0[(0, 0)], h.r0[(1, 0)], h.r0[(2, 0)]],
            axis_normal_dot: h.axis_normal_dot,
            origin_ambiguous: h.origin_ambiguous,
            piston_amp_mm: h.piston_amp_mm,
            piston_hz: h.piston_hz,
        }
    }

    /// Unpacks a home frame.
    pub fn to_frame(&self, path: &Path) -> Result<HomeFrame, DatasetError> {
        Ok(HomeFrame {
            r0: mat3_from_rows(&self.r0),
            origin: Point3::new(self.origin_mm[0], self.origin_mm[1], self.origin_mm[2]),
            home_plane: self.home_plane.to_plane(path)?,
            axis_normal_dot: self.axis_normal_dot,
            origin_ambiguous: self.origin_ambiguous,
            piston_amp_mm: self.piston_amp_mm,
            piston_hz: self.piston_hz,
        })
    }
}

/// `ground_truth.json`: everything the simulator knows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    /// World → camera 1.
    pub t_c1_w: TransformRecord,
    /// World → camera 2.
    pub t_c2_w: TransformRecord,
    /// Sliding board → camera 1 per capture.
    pub t_c1_sl: Vec<TransformRecord>,
    /// True beam lines.
    pub beams: Vec<BeamLineRecord>,
    /// True mirror plane per pulse.
    pub planes: Vec<PlaneRecord>,
    /// True mirror pose per pulse.
    pub poses: Vec<PoseRecord>,
    /// Pulse times (s).
    pub pulse_times_s: Vec<f64>,
    /// Segment tag per pulse.
    pub segments: Vec<ScanSegment>,
    /// True home frame.
    pub home_frame: HomeFrameRecord,
    /// Injected Hall clock lag (s), when a Hall log exists.
    pub hall_dt_s: Option<f64>,
}

impl GroundTruthFile {
    /// Packs simulator ground truth.
    pub fn from_truth(truth: &GroundTruth, segments: &[ScanSegment]) -> Self {
        Self {
            t_c1_w: TransformRecord::from_transform(&truth.t_c1_w),
            t_c2_w: TransformRecord::from_transform(&truth.t_c2_w),
            t_c1_sl: truth.t_c1_sl.iter().map(TransformRecord::from_transform).collect(),
            beams: truth
                .beams
                .iter()
                .map(|(id, line)| BeamLineRecord::from_line(*id, line))
                .collect(),
            planes: truth.planes.iter().map(PlaneRecord::from_plane).collect(),
            poses: truth.poses.iter().map(PoseRecord::from_pose).collect(),
            pulse_times_s: truth.pulse_times.clone(),
            segments: segments.to_vec(),
            home_frame: HomeFrameRecord::from_frame(&truth.home),
            hall_dt_s: truth.hall_dt_s,
        }
    }
}

// ---------------------------------------------------------------------------
// Estimator outputs: beams_est.json, poses.json, hallmodel.json.

/// One estimated beam with fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamEstimateRecord {
    /// Beam id.
    pub id: usize,
    /// Unit direction.
    pub v: [f64; 3],
    /// Moment (mm).
    pub m_mm: [f64; 3],
    /// RMS point-to-line distance of the triangulated dots (mm).
    pub rms_mm: f64,
    /// Second-to-first singular value ratio of the dot spread.
    pub sv_ratio: f64,
}

impl BeamEstimateRecord {
    /// Unpacks and re-normalizes the line.
    pub fn to_line(&self, path: &Path) -> Result<PluckerLine, DatasetError> {
        PluckerLine::new(
            Vector3::new(self.v[0], self.v[1], self.v[2]),
            Vector3::new(self.m_mm[0], self.m_mm[1], self.m_mm[2]),
        )
        .map_err(|source| DatasetError::Geom { path: path.into(), source })
    }
}

/// `beams_est.json`: reconstructed beams and camera-1 extrinsics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeamsEstimateFile {
    /// World → camera 1.
    pub t_c1_w: TransformRecord,
    /// Sliding board → camera 1 per capture.
    pub t_c1_sl: Vec<TransformRecord>,
    /// Mean PnP reprojection residual (px).
    pub pnp_mean_reproj_px: f64,
    /// Estimated beams.
    pub beams: Vec<BeamEstimateRecord>,
}

impl BeamsEstimateFile {
    /// Unpacks into the seed the pose stage consumes.
    pub fn to_stage(&self, path: &Path) -> Result<crate::pose::BeamStageInit, DatasetError> {
        Ok(crate::pose::BeamStageInit {
            t_c1_w: self.t_c1_w.to_transform(path)?,
            t_c1_sl: self
                .t_c1_sl
                .iter()
                .map(|t| t.to_transform(path))
                .collect::<Result<_, _>>()?,
            beams: self
                .beams
                .iter()
                .map(|b| Ok((b.id, b.to_line(path)?)))
                .collect::<Result<_, DatasetError>>()?,
        })
    }

    /// Packs a beam reconstruction.
    pub fn from_reconstruction(rec: &BeamReconstruction) -> Self {
        Self {
            t_c1_w: TransformRecord::from_transform(&rec.t_c1_w),
            t_c1_sl: rec.t_c1_sl.iter().map(TransformRecord::from_transform).collect(),
            pnp_mean_reproj_px: rec.pnp_world.mean_reproj_px,
            beams: rec
                .beams
                .iter()
                .map(|b| BeamEstimateRecord {
                    id: b.beam_id,
                    v: vec3(&b.line.v),
                    m_mm: vec3(&b.line.m),
                    rms_mm: b.rms_mm,
                    sv_ratio: b.sv_ratio,
                })
                .collect(),
        }
    }
}

/// One estimated pulse in `poses.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseRecord {
    /// Pulse index.
    pub pulse: usize,
    /// Trigger time (s).
    pub t_s: f64,
    /// Segment tag.
    pub segment: ScanSegment,
    /// Estimated mirror plane in {W}.
    pub plane: PlaneRecord,
    /// 3×3 covariance of the minimal plane parameters, row-major.
    pub cov_plane: [[f64; 3]; 3],
    /// Spanning angle between the light-path normals (deg).
    pub theta_deg: f64,
    /// Pose in the home frame, filled by the frame stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pose: Option<PoseRecord>,
}

/// One held-out-beam prediction in `poses.json`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HoldoutRecord {
    /// Pulse index.
    pub pulse: usize,
    /// Trigger time (s).
    pub t_s: f64,
    /// Prediction error (px).
    pub delta_px: f64,
    /// Predicted standard deviation of the error (px).
    pub sigma_px: f64,
}

/// `poses.json`: per-pulse planes, diagnostics, and frame-stage extensions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosesFile {
    /// Per-pulse estimates.
    pub pulses: Vec<PulseRecord>,
    /// Mean spanning angle over pulses (deg).
    pub spanning_angle_mean_deg: f64,
    /// Which beam was held out, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_beam: Option<usize>,
    /// Held-out predictions.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holdout: Vec<HoldoutRecord>,
    /// Home frame, filled by the frame stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home_frame: Option<HomeFrameRecord>,
}

impl PosesFile {
    /// Packs solver output.
    pub fn new(
        estimates: &[PoseEstimate],
        per_pulse_theta_deg: &[f64],
        theta_mean_deg: f64,
        segments: &[ScanSegment],
    ) -> Self {
        let pulses = estimates
            .iter()
            .map(|e| PulseRecord {
                pulse: e.pulse,
                t_s: e.t_s,
                segment: segments.get(e.pulse).copied().unwrap_or(ScanSegment::TwoAxis),
                plane: PlaneRecord::from_plane(&e.plane),
                cov_plane: mat3_rows(&e.cov),
                theta_deg: per_pulse_theta_deg.get(e.pulse).copied().unwrap_or(f64::NAN),
                pose: None,
            })
            .collect();
        Self {
            pulses,
            spanning_angle_mean_deg: theta_mean_deg,
            holdout_beam: None,
            holdout: Vec::new(),
            home_frame: None,
        }
    }

    /// Attaches held-out predictions.
    pub fn with_holdout(mut self, beam_id: usize, predictions: &[HeldoutPrediction]) -> Self {
        self.holdout_beam = Some(beam_id);
        self.holdout = predictions
            .iter()
            .map(|p| HoldoutRecord {
                pulse: p.pulse,
                t_s: p.t_s,
                delta_px: p.delta_px,
                sigma_px: p.sigma_px,
            })
            .collect();
        self
    }

    /// Unpacks planes with their pulse indices and segment tags.
    pub fn planes(&self, path: &Path) -> Result<Vec<(usize, PlaneH, ScanSegment)>, DatasetError> {
        self.pulses
            .iter()
            .map(|p| Ok((p.pulse, p.plane.to_plane(path)?, p.segment)))
            .collect()
    }
}

/// Per-component RMSE (tilts in degrees, piston in mm).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RmseRecord {
    /// Fast-axis tilt RMSE (deg).
    pub alpha_deg: f64,
    /// Slow-axis tilt RMSE (deg).
    pub beta_deg: f64,
    /// Piston RMSE (mm).
    pub d_mm: f64,
}

impl RmseRecord {
    /// Packs a per-component triple (α deg, β deg, d mm).
    pub fn from_components(c: [f64; 3]) -> Self {
        Self { alpha_deg: c[0], beta_deg: c[1], d_mm: c[2] }
    }
}

/// Repeated-split evaluation summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Number of random splits.
    pub repeats: usize,
    /// Mean test RMSE per component.
    pub rmse_mean: RmseRecord,
    /// Standard deviation of test RMSE per component.
    pub rmse_sd: RmseRecord,
    /// Mean recovered clock offset (s).
    pub dt_mean_s: f64,
}

impl EvalRecord {
    /// Packs an evaluation report.
    pub fn from_report(r: &EvalReport) -> Self {
        Self {
            repeats: r.repeats,
            rmse_mean: RmseRecord::from_components(r.rmse_mean),
            rmse_sd: RmseRecord::from_components(r.rmse_sd),
            dt_mean_s: r.dt_mean_s,
        }
    }
}

/// `hallmodel.json`: the fitted sensor model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HallModelFile {
    /// Feature family.
    pub kind: HallModelKind,
    /// 3×4 coefficient matrix, row-major; rows map features to
    /// (α deg, β deg, d mm) after the stored radian→degree conversion.
    pub a: [[f64; 4]; 3],
    /// Recovered clock offset (s).
    pub dt_s: f64,
    /// Tone frequency per axis (Hz).
    pub f_hz: [f64; 3],
    /// Tone phase per axis (rad), sine model only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_rad: Option<[f64; 3]>,
    /// Training RMSE per component.
    pub train_rmse: RmseRecord,
    /// Test RMSE per component from the repeated-split evaluation.
    pub test_rmse: RmseRecord,
    /// Full evaluation summary.
    pub eval: EvalRecord,
}

impl HallModelFile {
    /// Packs a fitted model with its evaluation.
    ///
    /// The stored matrix keeps the internal radian convention for the two
    /// tilt rows; consumers get degrees in the RMSE fields only.
    pub fn from_model(model: &HallModel, train_rmse: [f64; 3], report: &EvalReport) -> Self {
        let a = model.a;
        Self {
            kind: model.kind,
            a: [
                [a[(0, 0)], a[(0, 1)], a[(0, 2)], a[(0, 3)]],
                [a[(1, 0)], a[(1, 1)], a[(1, 2)], a[(1, 3)]],
                [a[(2, 0)], a[(2, 1)], a[(2, 2)], a[(2, 3)]],
            ],
            dt_s: model.dt_s,
            f_hz: model.f_hz,
            phi_rad: match model.kind {
                HallModelKind::Sine => Some(model.phi_rad),
                HallModelKind::Linear => None,
            },
            train_rmse: RmseRecord::from_components(train_rmse),
            test_rmse: RmseRecord::from_components(report.rmse_mean),
            eval: EvalRecord::from_report(report),
        }
    }

    /// Unpacks into a model usable for prediction.
    ///
    /// [`HallModel`] keeps only a mixed-unit scalar training RMSE, which the
    /// per-component records here cannot reproduce; it is left at zero.
    pub fn to_model(&self) -> HallModel {
        let mut a = Matrix3x4::zeros();
        for (r, row) in self.a.iter().enumerate() {
            for (c, value) in row.iter().enumerate() {
                a[(r, c)] = *value;
            }
        }
        HallModel {
            kind: self.kind,
            a,
            dt_s: self.dt_s,
            f_hz: self.f_hz,
            phi_rad: self.phi_rad.unwrap_or([0.0; 3]),
            train_rmse: 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Directory-level load and save.

/// Standard file names inside a dataset directory.
pub mod files {
    /// Rig geometry.
    pub const SCENE: &str = "scene.json";
    /// Sliding-stage captures.
    pub const BEAMS: &str = "beams.json";
    /// Scan-stage frames.
    pub const SCAN: &str = "scan.json";
    /// Actuated Hall log.
    pub const HALL_ACTUAL: &str = "hall_actual.csv";
    /// Background Hall log.
    pub const HALL_BACKGROUND: &str = "hall_background.csv";
    /// Simulator ground truth.
    pub const GROUND_TRUTH: &str = "ground_truth.json";
    /// Beam estimates.
    pub const BEAMS_EST: &str = "beams_est.json";
    /// Pose estimates.
    pub const POSES: &str = "poses.json";
    /// Hall model.
    pub const HALL_MODEL: &str = "hallmodel.json";
}

/// Writes a synthetic dataset into a directory, creating it if needed.
pub fn save_dataset(dir: &Path, data: &SyntheticDataset) -> Result<(), DatasetError> {
    fs::create_dir_all(dir).map_err(|source| DatasetError::Io { path: dir.into(), source })?;
    write_json(&dir.join(files::SCENE), &data.scene)?;
    write_json(&dir.join(files::BEAMS), &BeamsFile::from_captures(&data.captures))?;
    write_json(&dir.join(files::SCAN), &ScanFile::from_frames(&data.frames, &data.segments))?;
    write_json(
        &dir.join(files::GROUND_TRUTH),
        &GroundTruthFile::from_truth(&data.truth, &data.segments),
    )?;
    if let Some(series) = &data.hall_actual {
        let path = dir.join(files::HALL_ACTUAL);
        series
            .write_csv(&path)
            .map_err(|e| DatasetError::Parse { path, detail: e.to_string() })?;
    }
    if let Some(series) = &data.hall_background {
        let path = dir.join(files::HALL_BACKGROUND);
        series
            .write_csv(&path)
            .map_err(|e| DatasetError::Parse { path, detail: e.to_string() })?;
    }
    Ok(())
}

/// Loads and validates the observation side of a dataset directory.
pub fn load_observations(
    dir: &Path,
) -> Result<(crate::sim::SceneConfig, Vec<SlidingCapture>, Vec<ScanFrame>, Vec<ScanSegment>), DatasetError> {
    let scene: crate::sim::SceneConfig = read_json(&dir.join(files::SCENE))?;
    let beams: BeamsFile = read_json(&dir.join(files::BEAMS))?;
    let scan: ScanFile = read_json(&dir.join(files::SCAN))?;
    let captures = beams.to_captures();
    let (frames, segments) = scan.to_frames();
    validate_observations(dir, &captures, &frames)?;
    Ok((scene, captures, frames, segments))
}

fn validate_observations(
    dir: &Path,
    captures: &[SlidingCapture],
    frames: &[ScanFrame],
) -> Result<(), DatasetError> {
    let beams_path = dir.join(files::BEAMS);
    if captures.len() < 2 {
        return Err(DatasetError::Schema {
            path: beams_path,
            detail: format!("need at least 2 captures, got {}", captures.len()),
        });
    }
    let capture_beams: std::collections::BTreeSet<usize> =
        captures.iter().flat_map(|c| c.dots.iter().map(|(id, _)| *id)).collect();
    let scan_path = dir.join(files::SCAN);
    let mut last_t = f64::NEG_INFINITY;
    for (i, frame) in frames.iter().enumerate() {
        if frame.k != i {
            return Err(DatasetError::Schema {
                path: scan_path,
                detail: format!("frame {i} has index {}", frame.k),
            });
        }
        for dot in &frame.dots {
            if dot.pulse != frame.k {
                return Err(DatasetError::Schema {
                    path: scan_path,
                    detail: format!("frame {i} holds a dot for pulse {}", dot.pulse),
                });
            }
            if !capture_beams.contains(&dot.beam_id) {
                return Err(DatasetError::Schema {
                    path: scan_path,
                    detail: format!(
                        "frame {i} references beam {} absent from {}",
                        dot.beam_id,
                        files::BEAMS
                    ),
                });
            }
            if dot.t_s < last_t {
                return Err(DatasetError::Schema {
                    path: scan_path,
                    detail: format!("pulse times not increasing at frame {i}"),
                });
            }
            last_t = dot.t_s;
        }
    }
    Ok(())
}

/// Loads the simulator ground truth if present.
pub fn load_ground_truth(dir: &Path) -> Result<Option<GroundTruthFile>, DatasetError> {
    let path = dir.join(files::GROUND_TRUTH);
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

/// Loads a Hall log.
pub fn load_hall_series(path: &Path) -> Result<HallSeries, DatasetError> {
    HallSeries::read_csv(path).map_err(|e| DatasetError::Parse {
        path: path.into(),
        detail: e.to_string(),
    })
}

/// Reads any of the JSON artifacts by explicit type.
pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, DatasetError> {
    read_json(path)
}

/// Writes any of the JSON artifacts.
pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DatasetError> {
    write_json(path, value)
}
