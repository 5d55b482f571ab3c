//! Closed-form initialization of mirror planes and the full state.
//!
//! The reflection principle gives the mirror plane of a pulse without
//! optimization: each incident beam and its reflected dot span a light-path
//! plane that contains the mirror normal, so two beams fix the normal up to
//! sign as the cross product of the light-path normals. The plane offset
//! follows from the midpoint between a dot's pre-image on the beam and the
//! beam point itself, which lies on the mirror.

use nalgebra::{Point3, Vector3};

use crate::beam::{lightpath_normal, reconstruct_beams, BeamReconstruction};
use crate::camera::{backproject_to_plane, solve_pnp};
use crate::geom::{closest_points, LineMin, PlaneH, PlaneMin, PluckerLine, RigidTransformMin};

use super::{CalibState, MleData, PoseError};

/// Maximum real/virtual skew gap before the midpoint fallback is rejected (mm).
const SKEW_GAP_TOL_MM: f64 = 1.0;

/// Spanning angles below 1° leave the normal ill-conditioned.
const MIN_SPAN_SIN: f64 = 0.017452406437283512;

/// Mirror plane from two beams and their reflected dots (world frame).
///
/// For each beam the light-path normal nᵢ is the unit normal of the plane
/// containing the beam line and its reflected dot Xᵢ. The mirror normal is
/// n_M ∝ n₁ × n₂, oriented against the first beam direction so it faces the
/// source. The offset comes from the midpoint of X₁ and its pre-image X₁′,
/// the intersection of beam 1 with the line through X₁ along n_M; with noisy
/// inputs the lines are skew and the common-perpendicular midpoint stands in,
/// rejected above a 1 mm gap.
pub fn init_mirror_plane(
    beams: [&PluckerLine; 2],
    dots: [&Point3<f64>; 2],
) -> Result<PlaneH, PoseError> {
    let n1 = path_normal(beams[0], dots[0])?;
    let n2 = path_normal(beams[1], dots[1])?;

    let cross = n1.cross(&n2);
    let sin_angle = cross.norm();
    if sin_angle <= MIN_SPAN_SIN {
        return Err(PoseError::DegenerateSpanningAngle { sin_angle });
    }
    let n_m = cross / sin_angle;
    let n_m = if n_m.dot(&beams[0].v) > 0.0 { -n_m } else { n_m };

    // Pre-image of dot 1 on beam 1, along the normal direction.
    let normal_line = PluckerLine::from_point_dir(dots[0], n_m)?;
    let (on_beam, on_normal, gap) = closest_points(beams[0], &normal_line)?;
    if gap > SKEW_GAP_TOL_MM {
        return Err(PoseError::SkewLines { gap_mm: gap });
    }
    let pre_image = Point3::from(0.5 * (on_beam.coords + on_normal.coords));
    let mirror_point = Point3::from(0.5 * (dots[0].coords + pre_image.coords));

    Ok(PlaneH::from_point_normal(&mirror_point, n_m)?.oriented_against(&beams[0].v))
}

fn path_normal(beam: &PluckerLine, dot: &Point3<f64>) -> Result<Vector3<f64>, PoseError> {
    match lightpath_normal(beam, dot) {
        Ok(n) => Ok(n),
        Err(crate::beam::BeamError::PointOnLine { distance }) => {
            Err(PoseError::Retroreflection { distance })
        }
        Err(e) => Err(e.into()),
    }
}

/// Beam-stage results that seed the initial state: camera-1 transforms and
/// the beam lines, keyed by beam id.
#[derive(Debug, Clone)]
pub struct BeamStageInit {
    /// World → camera 1.
    pub t_c1_w: RigidTransformMin,
    /// Sliding board → camera 1 per capture.
    pub t_c1_sl: Vec<RigidTransformMin>,
    /// Beam lines with their ids.
    pub beams: Vec<(usize, PluckerLine)>,
}

impl From<&BeamReconstruction> for BeamStageInit {
    fn from(recon: &BeamReconstruction) -> Self {
        Self {
            t_c1_w: recon.t_c1_w,
            t_c1_sl: recon.t_c1_sl.clone(),
            beams: recon.beams.iter().map(|b| (b.beam_id, b.line)).collect(),
        }
    }
}

/// Builds the full initial state from the raw dataset.
///
/// Beam lines and the camera-1 transforms come from the sliding-stage
/// reconstruction, the camera-2 transform from a joint PnP over all scan
/// frames, and each pulse's mirror plane from [`init_mirror_plane`] applied
/// to the first two beams observed at that pulse, with dots back-projected
/// onto the world plane z = 0.
pub fn init_state(data: &MleData) -> Result<CalibState, PoseError> {
    let recon = reconstruct_beams(&data.captures, &data.world_board, &data.sliding_board, &data.k)?;
    init_state_with(data, BeamStageInit::from(&recon))
}

/// Like [`init_state`] but with the beam stage supplied, e.g. loaded from an
/// earlier run instead of recomputed.
pub fn init_state_with(data: &MleData, stage: BeamStageInit) -> Result<CalibState, PoseError> {
    if stage.t_c1_sl.len() != data.captures.len() {
        return Err(PoseError::Inconsistent {
            detail: format!(
                "beam stage has {} sliding transforms, dataset has {} captures",
                stage.t_c1_sl.len(),
                data.captures.len()
            ),
        });
    }
    let mut stage_beams = stage.beams;
    stage_beams.sort_by_key(|(id, _)| *id);

    let all_corners: Vec<_> =
        data.frames.iter().flat_map(|f| f.corners.iter().copied()).collect();
    let t_c2_w = solve_pnp(&all_corners, &data.world_board, &data.k)?.t;

    let world_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let n_pulses = data.pulse_count();
    let mut pulse_obs: Vec<Vec<(usize, Point3<f64>)>> = vec![Vec::new(); n_pulses];
    for frame in &data.frames {
        for dot in &frame.dots {
            let x = backproject_to_plane(&dot.point, &t_c2_w, &data.k, &world_plane)?;
            pulse_obs[dot.pulse].push((dot.beam_id, x));
        }
    }

    let beam_ids: Vec<usize> = stage_beams.iter().map(|(id, _)| *id).collect();
    let beam_lines: Vec<PluckerLine> = stage_beams.iter().map(|(_, line)| *line).collect();

    let mut planes = Vec::with_capacity(n_pulses);
    for (j, obs) in pulse_obs.iter().enumerate() {
        let mut pair: Vec<(usize, &Point3<f64>)> = Vec::with_capacity(2);
        for (beam_id, x) in obs {
            if let Some(b) = beam_ids.iter().position(|id| id == beam_id) {
                if !pair.iter().any(|(bb, _)| *bb == b) {
                    pair.push((b, x));
                }
            }
        }
        if pair.len() < 2 {
            return Err(PoseError::MissingBeams { pulse: j, got: pair.len() });
        }
        let plane = init_mirror_plane(
            [&beam_lines[pair[0].0], &beam_lines[pair[1].0]],
            [pair[0].1, pair[1].1],
        )?;
        planes.push(PlaneMin::from_plane(&plane));
    }

    let mut beams = Vec::with_capacity(beam_lines.len());
    for line in &beam_lines {
        beams.push(LineMin::from_line(line)?);
    }

    Ok(CalibState {
        planes,
        beams,
        beam_ids,
        t_c1_w: stage.t_c1_w,
        t_c2_w,
        t_c1_sl: stage.t_c1_sl,
    })
}
