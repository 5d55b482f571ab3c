//! Hold-out validation: predicting the dots of a beam excluded from the fit.
//!
//! The held-out beam is rebuilt from its sliding-stage dots using the refined
//! extrinsics, mirrored across each refined plane, and projected into the
//! scan camera. The gap to the observed dot is the prediction error; its
//! a-priori standard deviation follows from first-order propagation of the
//! state covariance and the measurement covariances through the predictor.

use nalgebra::{DMatrix, DVector, Matrix2, Point3, RowDVector, Vector2, Vector3};

use crate::beam::fit_line_pca;
use crate::camera::{backproject_to_plane, ImagePoint, Intrinsics};
use crate::geom::{
    line_plane_intersect, reflect_line, reflection_matrix, PlaneH, PlaneMin, RigidTransformMin,
};

use super::solve::MleSolution;
use super::{MleData, PoseError};

/// Predicted vs. observed dot of the held-out beam at one pulse.
#[derive(Debug, Clone, Copy)]
pub struct HeldoutPrediction {
    /// Pulse index.
    pub pulse: usize,
    /// Pulse time (s).
    pub t_s: f64,
    /// Predicted pixel.
    pub uv_pred: Vector2<f64>,
    /// Observed pixel.
    pub uv_obs: Vector2<f64>,
    /// Prediction error ‖obs − pred‖ (px).
    pub delta_px: f64,
    /// First-order standard deviation of the error (px).
    pub sigma_px: f64,
}

/// Everything the predictor depends on for one pulse, flattened for finite
/// differencing: the extrinsics involved, the pulse's plane chart, and the
/// held-out beam's sliding-dot pixels.
struct PredParams {
    /// [w;t] per transform: camera-1, camera-2, then the used sliding
    /// captures in order.
    transforms: Vec<RigidTransformMin>,
    /// Plane chart of the pulse.
    plane: Vector3<f64>,
    /// Sliding-dot pixels of the held-out beam, one per used capture.
    dots: Vec<Vector2<f64>>,
}

impl PredParams {
    fn dim(&self) -> usize {
        6 * self.transforms.len() + 3 + 2 * self.dots.len()
    }

    fn get(&self, i: usize) -> f64 {
        let nt = 6 * self.transforms.len();
        if i < nt {
            let t = &self.transforms[i / 6];
            let a = i % 6;
            if a < 3 { t.w[a] } else { t.t[a - 3] }
        } else if i < nt + 3 {
            self.plane[i - nt]
        } else {
            let k = i - nt - 3;
            self.dots[k / 2][k % 2]
        }
    }

    fn set(&mut self, i: usize, value: f64) {
        let nt = 6 * self.transforms.len();
        if i < nt {
            let t = &mut self.transforms[i / 6];
            let a = i % 6;
            if a < 3 { t.w[a] = value } else { t.t[a - 3] = value }
        } else if i < nt + 3 {
            self.plane[i - nt] = value;
        } else {
            let k = i - nt - 3;
            self.dots[k / 2][k % 2] = value;
        }
    }
}

/// Runs the full predictor for one pulse: back-project sliding dots, refit
/// the beam line, reflect, intersect the world plane, project.
fn predict_uv(params: &PredParams, k: &Intrinsics) -> Result<Vector2<f64>, PoseError> {
    let t_c1_w = &params.transforms[0];
    let t_c2_w = &params.transforms[1];
    let r1 = t_c1_w.rotation();

    let mut points: Vec<Point3<f64>> = Vec::with_capacity(params.dots.len());
    for (i, uv) in params.dots.iter().enumerate() {
        let t_sl = &params.transforms[2 + i];
        // Sliding-board plane z = 0 expressed in {W}.
        let a: Vector3<f64> = t_sl.rotation().column(2).into_owned();
        let n_l = r1.transpose() * a;
        let d_l = a.dot(&(t_c1_w.t - t_sl.t));
        let plane_l = PlaneH { n: n_l, d: d_l };
        let dot = ImagePoint::with_sigma(uv.x, uv.y, 1.0);
        points.push(backproject_to_plane(&dot, t_c1_w, k, &plane_l)?);
    }
    let fit = fit_line_pca(&points)?;

    let plane = PlaneMin { p: params.plane }.to_plane()?;
    let reflected = reflect_line(&fit.line, &reflection_matrix(&plane));
    let world_plane = PlaneH { n: Vector3::z(), d: 0.0 };
    let x = line_plane_intersect(&reflected, &world_plane)?;
    Ok(crate::camera::project(t_c2_w, k, &x)?)
}

/// Predicts every scan dot of a held-out beam and scores it against the
/// observation.
///
/// `solution` must come from a fit of `data.without_beam(heldout_beam)`; the
/// held-out dots are read from `data` itself. The reported σ combines the
/// state covariance (extrinsics and the pulse's plane, with cross terms),
/// the held-out sliding-dot covariances, and the scan-dot covariance, all
/// propagated to first order with central differences through the predictor.
pub fn predict_heldout(
    solution: &MleSolution,
    data: &MleData,
    heldout_beam: usize,
) -> Result<Vec<HeldoutPrediction>, PoseError> {
    if solution.state.beam_index(heldout_beam).is_some() {
        return Err(PoseError::Inconsistent {
            detail: format!("beam {heldout_beam} was part of the fit"),
        });
    }
    let layout = &solution.layout;
    if layout.n_captures != data.captures.len() {
        return Err(PoseError::Inconsistent {
            detail: format!(
                "solution has {} captures, dataset has {}",
                layout.n_captures,
                data.captures.len()
            ),
        });
    }

    // Sliding dots of the held-out beam.
    let mut used_captures = Vec::new();
    let mut dot_points: Vec<ImagePoint> = Vec::new();
    for (l, capture) in data.captures.iter().enumerate() {
        for (beam_id, point) in &capture.dots {
            if *beam_id == heldout_beam {
                used_captures.push(l);
                dot_points.push(*point);
            }
        }
    }
    if used_captures.len() < 2 {
        return Err(PoseError::Beam(crate::beam::BeamError::InsufficientCaptures {
            beam_id: heldout_beam,
            got: used_captures.len(),
        }));
    }

    // Covariance over [c1w, c2w, used sliding transforms, plane_j] plus the
    // sliding-dot pixels; the plane block is filled in per pulse.
    let mut cov_idx: Vec<usize> = Vec::new();
    cov_idx.extend(layout.c1w()..layout.c1w() + 6);
    cov_idx.extend(layout.c2w()..layout.c2w() + 6);
    for &l in &used_captures {
        cov_idx.extend(layout.sliding(l)..layout.sliding(l) + 6);
    }

    let base_transforms: Vec<RigidTransformMin> = {
        let mut v = vec![solution.state.t_c1_w, solution.state.t_c2_w];
        v.extend(used_captures.iter().map(|&l| solution.state.t_c1_sl[l]));
        v
    };

    let mut out = Vec::new();
    for frame in &data.frames {
        for dot in &frame.dots {
            if dot.beam_id != heldout_beam {
                continue;
            }
            let j = dot.pulse;
            if j >= solution.state.planes.len() {
                return Err(PoseError::Inconsistent {
                    detail: format!("held-out dot references pulse {j} outside the solution"),
                });
            }

            let params = PredParams {
                transforms: base_transforms.clone(),
                plane: solution.state.planes[j].p,
                dots: dot_points.iter().map(|p| p.uv()).collect(),
            };

            let uv_pred = predict_uv(&params, &data.k)?;
            let obs = dot.point.uv();
            let diff = obs - uv_pred;
            let delta_px = diff.norm();
            let unit = if delta_px > 1e-12 { diff / delta_px } else { Vector2::x() };

            // Central differences of the predictor over all parameters.
            let dim = params.dim();
            let jac = {
                let mut jac = DMatrix::zeros(2, dim);
                let mut p = params;
                for i in 0..dim {
                    let v0 = p.get(i);
                    let h = 1e-6 * v0.abs().max(1.0);
                    p.set(i, v0 + h);
                    let plus = predict_uv(&p, &data.k)?;
                    p.set(i, v0 - h);
                    let minus = predict_uv(&p, &data.k)?;
                    p.set(i, v0);
                    let col = (plus - minus) / (2.0 * h);
                    jac[(0, i)] = col.x;
                    jac[(1, i)] = col.y;
                }
                jac
            };

            // Parameter covariance: state submatrix with cross terms, then
            // independent sliding-dot covariances.
            let mut idx = cov_idx.clone();
            idx.extend(layout.plane(j)..layout.plane(j) + 3);
            let ns = idx.len();
            let mut sigma_p = DMatrix::zeros(dim, dim);
            // State order in `idx` is [c1w, c2w, sliding…, plane]; the
            // parameter order is [c1w, c2w, sliding…, plane, dots…], so the
            // state block maps one-to-one onto the leading rows.
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    sigma_p[(a, b)] = solution.cov[(ia, ib)];
                }
            }
            for (d, point) in dot_points.iter().enumerate() {
                let off = ns + 2 * d;
                for a in 0..2 {
                    for b in 0..2 {
                        sigma_p[(off + a, off + b)] = point.cov[(a, b)];
                    }
                }
            }

            let du: RowDVector<f64> = RowDVector::from_iterator(
                dim,
                (0..dim).map(|i| -(unit.x * jac[(0, i)] + unit.y * jac[(1, i)])),
            );
            let var_params = (&du * &sigma_p * du.transpose())[(0, 0)];
            let obs_cov: Matrix2<f64> = dot.point.cov;
            let var_obs = (unit.transpose() * obs_cov * unit)[(0, 0)];
            let sigma_px = (var_params + var_obs).max(0.0).sqrt();

            out.push(HeldoutPrediction {
                pulse: j,
                t_s: dot.t_s,
                uv_pred,
                uv_obs: obs,
                delta_px,
                sigma_px,
            });
        }
    }
    out.sort_by(|a, b| a.pulse.cmp(&b.pulse));
    Ok(out)
}

/// Image scale on a world plane at a pixel: millimetres spanned per pixel,
/// averaged over the two image axes, by back-projecting half-pixel offsets.
pub fn local_mm_per_px(
    t: &RigidTransformMin,
    k: &Intrinsics,
    plane: &PlaneH,
    uv: &Vector2<f64>,
) -> Result<f64, PoseError> {
    let probe = |du: f64, dv: f64| -> Result<Point3<f64>, PoseError> {
        let p = ImagePoint::with_sigma(uv.x + du, uv.y + dv, 1.0);
        Ok(backproject_to_plane(&p, t, k, plane)?)
    };
    let span_u = (probe(0.5, 0.0)?.coords - probe(-0.5, 0.0)?.coords).norm();
    let span_v = (probe(0.0, 0.5)?.coords - probe(0.0, -0.5)?.coords).norm();
    Ok(0.5 * (span_u + span_v))
}

/// Converts a dot prediction error to a mirror-angle error.
///
/// A mirror tilt of ε deflects the reflected ray by 2ε, so a dot displaced
/// by δ millimetres at lever arm r from the mirror corresponds to
/// ε = atan(δ/r)/2.
pub fn pixel_error_to_angle_deg(delta_px: f64, mm_per_px: f64, lever_mm: f64) -> f64 {
    0.5 * (delta_px * mm_per_px / lever_mm).atan().to_degrees()
}

/// Residual vector helper for diagnostics: per-pulse δ/σ ratios.
pub fn normalized_errors(predictions: &[HeldoutPrediction]) -> DVector<f64> {
    DVector::from_iterator(
        predictions.len(),
        predictions.iter().map(|p| p.delta_px / p.sigma_px.max(1e-30)),
    )
}
