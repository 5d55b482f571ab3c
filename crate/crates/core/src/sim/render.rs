//! Observation rendering: projects the true scene into noisy measurements.
//!
//! Rendering draws noise in a fixed order (captures by index, corners by id,
//! dots by beam id, then frames by pulse), so a seed pins the entire dataset
//! byte for byte. Checkerboard corners that fall outside the image are
//! dropped, as a detector would; laser dots are load-bearing for every
//! downstream stage, so a dot off its board or off the image is an error
//! that points at the scene layout rather than a silently thinner dataset.

use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{NoiseConfig, SceneConfig, SimError};
use crate::beam::SlidingCapture;
use crate::camera::{project, CheckerboardSpec, CornerObservation, ImagePoint};
use crate::geom::{line_plane_intersect, reflect_line, reflection_matrix, PlaneH, RigidTransformMin};
use crate::pose::{ScanDot, ScanFrame};

/// Smallest pixel sigma an observation reports, so whitening stays finite
/// on noise-free datasets.
const SIGMA_FLOOR_PX: f64 = 1e-4;

/// Minimum visible corners per board per image.
const MIN_CORNERS: usize = 12;

/// World → camera extrinsics looking from eye toward target, image v axis
/// aligned with world +y.
pub fn look_at(eye: &Point3<f64>, target: &Point3<f64>) -> Result<RigidTransformMin, SimError> {
    let fwd = target - eye;
    if fwd.norm() < 1e-9 {
        return Err(SimError::Config("camera target coincides with eye".into()));
    }
    let z = fwd.normalize();
    let x = Vector3::y().cross(&z);
    if x.norm() < 1e-9 {
        return Err(SimError::Config("camera axis parallel to world y".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = nalgebra::Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let t = -(r * eye.coords);
    RigidTransformMin::from_rt(&r, t).map_err(|e| SimError::Config(format!("look-at: {e}")))
}

fn noisy(
    uv: nalgebra::Vector2<f64>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> ImagePoint {
    let (du, dv) = if sigma > 0.0 {
        let a: f64 = rng.sample(StandardNormal);
        let b: f64 = rng.sample(StandardNormal);
        (sigma * a, sigma * b)
    } else {
        (0.0, 0.0)
    };
    ImagePoint::with_sigma(uv.x + du, uv.y + dv, sigma.max(SIGMA_FLOOR_PX))
}

fn in_image(uv: &nalgebra::Vector2<f64>, size: (u32, u32)) -> bool {
    uv.x >= 0.0 && uv.y >= 0.0 && uv.x < size.0 as f64 && uv.y < size.1 as f64
}

/// Projects every board corner, keeping those inside the image.
fn render_board(
    board: &CheckerboardSpec,
    t_board_w: Option<&RigidTransformMin>,
    t_cam_w: &RigidTransformMin,
    scene: &SceneConfig,
    sigma: f64,
    rng: &mut ChaCha8Rng,
    context: &str,
) -> Result<Vec<CornerObservation>, SimError> {
    let mut out = Vec::with_capacity(board.corner_count());
    for id in 0..board.corner_count() {
        let local = board.corner_position(id);
        let world = match t_board_w {
            Some(t) => t.transform_point(&local),
            None => local,
        };
        let uv = match project(t_cam_w, &scene.k, &world) {
            Ok(uv) => uv,
            Err(_) => continue,
        };
        if !in_image(&uv, scene.image_size) {
            continue;
        }
        out.push(CornerObservation { id, point: noisy(uv, sigma, rng) });
    }
    if out.len() < MIN_CORNERS {
        return Err(SimError::OutOfBounds {
            what: format!("only {} corners visible", out.len()),
            context: context.into(),
        });
    }
    Ok(out)
}

/// Checks a hit against board extents with half a cell of margin.
fn on_board(local: &Point3<f64>, board: &CheckerboardSpec) -> bool {
    let m = 0.5 * board.cell_mm;
    let span_x = (board.cols - 1) as f64 * board.cell_mm;
    let span_y = (board.rows - 1) as f64 * board.cell_mm;
    local.x >= -m && local.x <= span_x + m && local.y >= -m && local.y <= span_y + m
}

/// Renders every sliding-stage capture.
pub fn render_captures(
    scene: &SceneConfig,
    t_c1_w: &RigidTransformMin,
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SlidingCapture>, SimError> {
    let mut captures = Vec::with_capacity(scene.sliding_x.len());
    for l in 0..scene.sliding_x.len() {
        let t_w_sl = scene.t_w_sl(l)?;
        let sliding_plane = t_w_sl.transform_plane(&PlaneH { n: Vector3::z(), d: 0.0 });
        let world_corners = render_board(
            &scene.world_board,
            None,
            t_c1_w,
            scene,
            noise.corner_sigma_px,
            rng,
            &format!("world board, capture {l}"),
        )?;
        let sliding_corners = render_board(
            &scene.sliding_board,
            Some(&t_w_sl),
            t_c1_w,
            scene,
            noise.corner_sigma_px,
            rng,
            &format!("sliding board, capture {l}"),
        )?;
        let mut dots = Vec::with_capacity(scene.beams.len());
        for beam in &scene.beams {
            let line = beam.line()?;
            let hit = line_plane_intersect(&line, &sliding_plane)?;
            let local = t_w_sl.inverse_transform_point(&hit);
            if !on_board(&local, &scene.sliding_board) {
                return Err(SimError::OutOfBounds {
                    what: format!(
                        "beam {} dot at board ({:.1}, {:.1}) mm",
                        beam.id, local.x, local.y
                    ),
                    context: format!("capture {l}"),
                });
            }
            let uv = project(t_c1_w, &scene.k, &hit)?;
            if !in_image(&uv, scene.image_size) {
                return Err(SimError::OutOfBounds {
                    what: format!("beam {} dot at ({:.0}, {:.0}) px", beam.id, uv.x, uv.y),
                    context: format!("capture {l}"),
                });
            }
            dots.push((beam.id, noisy(uv, noise.dot_sigma_px, rng)));
        }
        captures.push(SlidingCapture { l, world_corners, sliding_corners, dots });
    }
    Ok(captures)
}

/// Renders one scan frame per pulse: world corners plus a reflected dot per
/// beam, all seen by camera 2.
pub fn render_frames(
    scene: &SceneConfig,
    t_c2_w: &RigidTransformMin,
    planes: &[PlaneH],
    pulse_times: &[f64],
    noise: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ScanFrame>, SimError> {
    let world_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let mut frames = Vec::with_capacity(planes.len());
    for (j, plane) in planes.iter().enumerate() {
        let corners = render_board(
            &scene.world_board,
            None,
            t_c2_w,
            scene,
            noise.corner_sigma_px,
            rng,
            &format!("world board, pulse {j}"),
        )?;
        let mut dots = Vec::with_capacity(scene.beams.len());
        for beam in &scene.beams {
            let line = beam.line()?;
            let hit = line_plane_intersect(&line, plane)?;
            let offset = (hit - scene.mirror_center).norm();
            if offset > scene.mirror_aperture_mm {
                return Err(SimError::BeamMissesMirror { beam: beam.id, pulse: j, offset_mm: offset });
            }
            let reflected = reflect_line(&line, &reflection_matrix(plane));
            let dot = line_plane_intersect(&reflected, &world_plane)?;
            if (dot - hit).dot(&reflected.v) <= 0.0 {
                return Err(SimError::OutOfBounds {
                    what: format!("beam {} reflects away from the board", beam.id),
                    context: format!("pulse {j}"),
                });
            }
            if !on_board(&dot, &scene.world_board) {
                return Err(SimError::OutOfBounds {
                    what: format!(
                        "beam {} dot at board ({:.1}, {:.1}) mm",
                        beam.id, dot.x, dot.y
                    ),
                    context: format!("pulse {j}"),
                });
            }
            let uv = project(t_c2_w, &scene.k, &dot)?;
            if !in_image(&uv, scene.image_size) {
                return Err(SimError::OutOfBounds {
                    what: format!("beam {} dot at ({:.0}, {:.0}) px", beam.id, uv.x, uv.y),
                    context: format!("pulse {j}"),
                });
            }
            dots.push(ScanDot {
                beam_id: beam.id,
                pulse: j,
                t_s: pulse_times[j],
                point: noisy(uv, noise.dot_sigma_px, rng),
            });
        }
        frames.push(ScanFrame { k: j, corners, dots });
    }
    Ok(frames)
}
