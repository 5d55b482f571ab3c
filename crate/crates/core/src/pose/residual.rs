//! Measurement functions and analytic Jacobians for the joint estimator.
//!
//! Three kinds of image measurements constrain the state:
//!
//! * `f_P`: a checkerboard corner projected through one transform.
//! * `f_L`: a laser dot on a sliding board, predicted by intersecting the
//!   beam line with the board plane expressed in {W} and projecting into
//!   camera 1.
//! * `f_R`: a reflected laser dot on the world board, predicted by mirroring
//!   the beam line across a mirror plane, intersecting the world plane z = 0,
//!   and projecting into camera 2.
//!
//! Each evaluator returns the predicted pixel together with Jacobians with
//! respect to the minimal chart coordinates of every state block it touches,
//! assembled by the chain rule from the geometric partials in [`crate::geom`].

use nalgebra::{DVector, Matrix2, Matrix2x3, Matrix2x4, Matrix2x6, Matrix3, Point3, Vector2, Vector3};

use crate::camera::{CameraError, ImagePoint, Intrinsics};
use crate::geom::{
    line_plane_intersect_partials, reflect_line_partials, rotation_exp, skew, so3_right_jacobian,
    LineMin, PlaneH, PlaneMin, PluckerLine, RigidTransformMin,
};

use super::{CalibState, MleData, PoseError};

/// Rotation, right Jacobian, and translation of a transform, computed once
/// and shared across the residual blocks that use it.
#[derive(Debug, Clone)]
pub(crate) struct TransformCache {
    pub r: Matrix3<f64>,
    pub jr: Matrix3<f64>,
    pub t: Vector3<f64>,
}

impl TransformCache {
    pub fn new(t: &RigidTransformMin) -> Self {
        Self { r: rotation_exp(&t.w), jr: so3_right_jacobian(&t.w), t: t.t }
    }

    /// Camera coordinates of a world point.
    fn to_camera(&self, x: &Point3<f64>) -> Result<Vector3<f64>, CameraError> {
        let xc = self.r * x.coords + self.t;
        if xc.z <= 1e-9 {
            return Err(CameraError::BehindCamera { depth: xc.z });
        }
        Ok(xc)
    }

    /// Projection of a world point.
    pub fn project(&self, k: &Intrinsics, x: &Point3<f64>) -> Result<Vector2<f64>, CameraError> {
        let xc = self.to_camera(x)?;
        Ok(Vector2::new(
            (k.fx * xc.x + k.cx * xc.z) / xc.z,
            (k.fy * xc.y + k.cy * xc.z) / xc.z,
        ))
    }

    /// Projection with Jacobians: ∂uv/∂[w; t] of this transform and
    /// ∂uv/∂X_c for chaining into the world point.
    pub fn project_full(
        &self,
        k: &Intrinsics,
        x: &Point3<f64>,
    ) -> Result<(Vector2<f64>, Matrix2x6<f64>, Matrix2x3<f64>), CameraError> {
        let xc = self.to_camera(x)?;
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
        let dxc_dw = -self.r * skew(&x.coords) * self.jr;
        let mut j_t = Matrix2x6::zeros();
        j_t.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp_dxc * dxc_dw));
        j_t.fixed_view_mut::<2, 3>(0, 3).copy_from(&dp_dxc);
        Ok((uv, j_t, dp_dxc))
    }
}

/// Beam line with its chart Jacobians, computed once per beam and shared
/// across pulses.
#[derive(Debug, Clone)]
pub(crate) struct LineCache {
    pub line: PluckerLine,
    pub dv_dw: Matrix3<f64>,
    pub dm_dw: Matrix3<f64>,
    pub dm_dmag: Vector3<f64>,
}

impl LineCache {
    pub fn new(l: &LineMin) -> Self {
        let (dv_dw, dm_dw, dm_dmag) = l.jacobian();
        Self { line: l.to_line(), dv_dw, dm_dw, dm_dmag }
    }

    /// Chains partials w.r.t. (v, m) into the 2×4 chart Jacobian [w_l | m].
    fn chain(&self, duv_dv: &Matrix2x3<f64>, duv_dm: &Matrix2x3<f64>) -> Matrix2x4<f64> {
        let dw = duv_dv * self.dv_dw + duv_dm * self.dm_dw;
        let dmag = duv_dm * self.dm_dmag;
        let mut j = Matrix2x4::zeros();
        j.fixed_view_mut::<2, 3>(0, 0).copy_from(&dw);
        j.fixed_view_mut::<2, 1>(0, 3).copy_from(&dmag);
        j
    }
}

/// Corner projection: predicted pixel and Jacobian w.r.t. the transform.
pub fn fp_eval(
    t: &RigidTransformMin,
    k: &Intrinsics,
    x: &Point3<f64>,
) -> Result<(Vector2<f64>, Matrix2x6<f64>), PoseError> {
    let cache = TransformCache::new(t);
    let (uv, j_t, _) = cache.project_full(k, x)?;
    Ok((uv, j_t))
}

/// Sliding-dot prediction `f_L` with Jacobians.
#[derive(Debug, Clone)]
pub struct FlEval {
    /// Predicted pixel in camera 1.
    pub uv: Vector2<f64>,
    /// ∂uv/∂[w; t] of the world → camera-1 transform.
    pub j_c1w: Matrix2x6<f64>,
    /// ∂uv/∂[w; t] of the sliding-board → camera-1 transform.
    pub j_c1sl: Matrix2x6<f64>,
    /// ∂uv/∂[w_l; m] of the beam line chart.
    pub j_line: Matrix2x4<f64>,
}

/// Predicts the laser dot of a beam on a sliding board.
///
/// The board plane z = 0 of frame S_l, expressed in {W} through the relative
/// transform (C1←S_l)⁻¹ ∘ (C1←W), has normal n_l = R_c1wᵀ a and offset
/// d_l = aᵀ(t_c1w − t_c1sl) with a the third column of R_c1sl. The beam is
/// intersected with that plane and the point projected into camera 1.
///
/// The world → camera-1 transform enters twice, through the plane and through
/// the projection; its Jacobian is the sum of both paths.
pub fn fl_eval(
    t_c1_w: &RigidTransformMin,
    t_c1_sl: &RigidTransformMin,
    line: &LineMin,
    k: &Intrinsics,
) -> Result<FlEval, PoseError> {
    fl_eval_cached(
        &TransformCache::new(t_c1_w),
        &TransformCache::new(t_c1_sl),
        &LineCache::new(line),
        k,
    )
}

pub(crate) fn fl_eval_cached(
    c1w: &TransformCache,
    c1sl: &TransformCache,
    line: &LineCache,
    k: &Intrinsics,
) -> Result<FlEval, PoseError> {
    let a: Vector3<f64> = c1sl.r.column(2).into_owned();
    let n_l = c1w.r.transpose() * a;
    let d_l = a.dot(&(c1w.t - c1sl.t));
    let plane_l = PlaneH { n: n_l, d: d_l };

    let (x, ip) = line_plane_intersect_partials(&line.line, &plane_l)?;
    let (uv, j_proj_t, dp_dx) = c1w.project_full(k, &x)?;
    let dp_dxw = dp_dx * c1w.r;

    // Plane partials w.r.t. the two transforms.
    let da_dwsl = -c1sl.r * skew(&Vector3::z()) * c1sl.jr;
    let dn_dwsl = c1w.r.transpose() * da_dwsl;
    let dd_dwsl = (c1w.t - c1sl.t).transpose() * da_dwsl;
    let dn_dw1w = skew(&n_l) * c1w.jr;

    // Intersection point per transform block.
    let dx_dw1w = ip.dx_dn * dn_dw1w;
    let dx_dt1w = ip.dx_dd * a.transpose();
    let dx_dwsl = ip.dx_dn * dn_dwsl + ip.dx_dd * dd_dwsl;
    let dx_dtsl = -ip.dx_dd * a.transpose();

    let mut plane_path = Matrix2x6::zeros();
    plane_path.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp_dxw * dx_dw1w));
    plane_path.fixed_view_mut::<2, 3>(0, 3).copy_from(&(dp_dxw * dx_dt1w));
    let j_c1w = j_proj_t + plane_path;

    let mut j_c1sl = Matrix2x6::zeros();
    j_c1sl.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dp_dxw * dx_dwsl));
    j_c1sl.fixed_view_mut::<2, 3>(0, 3).copy_from(&(dp_dxw * dx_dtsl));

    let j_line = line.chain(&(dp_dxw * ip.dx_dv), &(dp_dxw * ip.dx_dm));

    Ok(FlEval { uv, j_c1w, j_c1sl, j_line })
}

/// Reflected-dot prediction `f_R` with Jacobians.
#[derive(Debug, Clone)]
pub struct FrEval {
    /// Predicted pixel in camera 2.
    pub uv: Vector2<f64>,
    /// ∂uv/∂[w; t] of the world → camera-2 transform.
    pub j_c2w: Matrix2x6<f64>,
    /// ∂uv/∂[w_l; m] of the beam line chart.
    pub j_line: Matrix2x4<f64>,
    /// ∂uv/∂p of the mirror plane chart.
    pub j_plane: Matrix2x3<f64>,
}

/// Predicts the reflected dot of a beam on the world board for one pulse.
///
/// The beam line is mirrored across the pulse's mirror plane, the image line
/// intersected with the world plane z = 0, and the point projected into
/// camera 2.
pub fn fr_eval(
    t_c2_w: &RigidTransformMin,
    line: &LineMin,
    plane: &PlaneMin,
    k: &Intrinsics,
) -> Result<FrEval, PoseError> {
    fr_eval_cached(&TransformCache::new(t_c2_w), &LineCache::new(line), plane, k)
}

pub(crate) fn fr_eval_cached(
    c2w: &TransformCache,
    line: &LineCache,
    plane: &PlaneMin,
    k: &Intrinsics,
) -> Result<FrEval, PoseError> {
    let plane_h = plane.to_plane()?;
    let (dn_dp, dd_dp) = plane.jacobian();

    let (reflected, rp) = reflect_line_partials(&line.line, &plane_h);
    let world_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let (x, ip) = line_plane_intersect_partials(&reflected, &world_plane)?;
    let (uv, j_c2w, dp_dx) = c2w.project_full(k, &x)?;
    let dp_dxw = dp_dx * c2w.r;

    // Through the reflected line into the incident line chart.
    let dx_dv = ip.dx_dv * rp.dvr_dv + ip.dx_dm * rp.dmr_dv;
    let dx_dm = ip.dx_dm * rp.dmr_dm;
    let j_line = line.chain(&(dp_dxw * dx_dv), &(dp_dxw * dx_dm));

    // Through the reflected line into the mirror-plane chart.
    let dx_dn = ip.dx_dv * rp.dvr_dn + ip.dx_dm * rp.dmr_dn;
    let dx_dd = ip.dx_dm * rp.dmr_dd;
    let j_plane = dp_dxw * (dx_dn * dn_dp + dx_dd * dd_dp.transpose());

    Ok(FrEval { uv, j_c2w, j_line, j_plane })
}

/// Whitened corner residuals: world-board corners seen by camera 1 during the
/// sliding stage, sliding-board corners, and world-board corners seen by
/// camera 2 during the scan stage, in that order.
pub fn cost_cp(state: &CalibState, data: &MleData) -> Result<DVector<f64>, PoseError> {
    if state.t_c1_sl.len() != data.captures.len() {
        return Err(PoseError::Inconsistent {
            detail: format!(
                "{} sliding transforms for {} captures",
                state.t_c1_sl.len(),
                data.captures.len()
            ),
        });
    }
    let c1w = TransformCache::new(&state.t_c1_w);
    let c2w = TransformCache::new(&state.t_c2_w);
    let mut out = Vec::new();
    for (capture, t_sl) in data.captures.iter().zip(&state.t_c1_sl) {
        let sl = TransformCache::new(t_sl);
        for corner in &capture.world_corners {
            let x = data.world_board.corner_position(corner.id);
            push_whitened(&mut out, &corner.point, c1w.project(&data.k, &x)?)?;
        }
        for corner in &capture.sliding_corners {
            let x = data.sliding_board.corner_position(corner.id);
            push_whitened(&mut out, &corner.point, sl.project(&data.k, &x)?)?;
        }
    }
    for frame in &data.frames {
        for corner in &frame.corners {
            let x = data.world_board.corner_position(corner.id);
            push_whitened(&mut out, &corner.point, c2w.project(&data.k, &x)?)?;
        }
    }
    Ok(DVector::from_vec(out))
}

/// Whitened sliding-dot residuals, capture-major then dot order.
///
/// Dots of beams absent from the state (held out) are skipped.
pub fn cost_cl(state: &CalibState, data: &MleData) -> Result<DVector<f64>, PoseError> {
    if state.t_c1_sl.len() != data.captures.len() {
        return Err(PoseError::Inconsistent {
            detail: format!(
                "{} sliding transforms for {} captures",
                state.t_c1_sl.len(),
                data.captures.len()
            ),
        });
    }
    let c1w = TransformCache::new(&state.t_c1_w);
    let lines: Vec<LineCache> = state.beams.iter().map(LineCache::new).collect();
    let mut out = Vec::new();
    for (capture, t_sl) in data.captures.iter().zip(&state.t_c1_sl) {
        let sl = TransformCache::new(t_sl);
        for (beam_id, point) in &capture.dots {
            let Some(b) = state.beam_index(*beam_id) else { continue };
            let eval = fl_eval_cached(&c1w, &sl, &lines[b], &data.k)?;
            push_whitened(&mut out, point, eval.uv)?;
        }
    }
    Ok(DVector::from_vec(out))
}

/// Whitened reflected-dot residuals, frame-major then dot order.
///
/// Dots of beams absent from the state (held out) are skipped.
pub fn cost_cr(state: &CalibState, data: &MleData) -> Result<DVector<f64>, PoseError> {
    let c2w = TransformCache::new(&state.t_c2_w);
    let lines: Vec<LineCache> = state.beams.iter().map(LineCache::new).collect();
    let mut out = Vec::new();
    for frame in &data.frames {
        for dot in &frame.dots {
            let Some(b) = state.beam_index(dot.beam_id) else { continue };
            if dot.pulse >= state.planes.len() {
                return Err(PoseError::Inconsistent {
                    detail: format!(
                        "dot references pulse {} but state has {} planes",
                        dot.pulse,
                        state.planes.len()
                    ),
                });
            }
            let eval = fr_eval_cached(&c2w, &lines[b], &state.planes[dot.pulse], &data.k)?;
            push_whitened(&mut out, &dot.point, eval.uv)?;
        }
    }
    Ok(DVector::from_vec(out))
}

fn push_whitened(
    out: &mut Vec<f64>,
    obs: &ImagePoint,
    predicted: Vector2<f64>,
) -> Result<(), PoseError> {
    let w: Matrix2<f64> = obs.whitener()?;
    let r = w * (obs.uv() - predicted);
    out.push(r.x);
    out.push(r.y);
    Ok(())
}
