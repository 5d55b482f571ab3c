//! Joint maximum-likelihood refinement of planes, beams, and extrinsics.
//!
//! The optimizer is Levenberg-Marquardt on the stacked whitened residuals of
//! the three measurement families. Every residual touches at most three
//! small state blocks, so the normal matrix is accumulated block-pairwise
//! from fixed-size Jacobians instead of forming a dense residual Jacobian.
//!
//! The state covariance at the solution is the inverse of the undamped
//! normal matrix, by a symmetric eigendecomposition that falls back to a
//! truncated pseudo-inverse when the conditioning is poor.

use nalgebra::{DMatrix, DVector, Matrix2x6, Matrix6, Point3, Vector2, Vector6};

use crate::camera::ImagePoint;

use super::residual::{fl_eval_cached, fr_eval_cached, LineCache, TransformCache};
use super::{CalibState, MleData, PoseError, PoseEstimate};

/// Stopping rules and damping schedule for [`solve_mle`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Iteration cap.
    pub max_iters: usize,
    /// Initial damping factor.
    pub lambda_init: f64,
    /// Stop when the gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step is shorter than this.
    pub step_tol: f64,
    /// Stop when an accepted step's relative cost decrease falls below this.
    pub cost_tol_rel: f64,
    /// Stop when the mean whitened squared residual falls below this. On
    /// noise-free data the cost bottoms out at rounding error, where neither
    /// the gradient nor the step criterion is reliable.
    pub cost_floor_per_residual: f64,
    /// Eigenvalue ratio beyond which the covariance switches to a truncated
    /// pseudo-inverse.
    pub cond_limit: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            lambda_init: 1e-3,
            grad_tol: 1e-8,
            step_tol: 1e-10,
            cost_tol_rel: 1e-10,
            cost_floor_per_residual: 1e-16,
            cond_limit: 1e12,
        }
    }
}

/// Optimizer diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    /// Iterations spent (accepted and rejected).
    pub iterations: usize,
    /// Whitened squared-residual sum at the initial state.
    pub initial_cost: f64,
    /// Whitened squared-residual sum at the solution.
    pub final_cost: f64,
    /// Gradient norm at the solution.
    pub grad_norm: f64,
    /// Whether a stopping rule fired before the iteration cap.
    pub converged: bool,
    /// Number of scalar residuals.
    pub residual_count: usize,
    /// Eigenvalue ratio of the final normal matrix.
    pub cond_estimate: f64,
}

/// Offsets of the state blocks inside the flat chart vector.
///
/// Layout: planes (3 each), beams (4 each), then the transforms
/// world→camera-1, world→camera-2, and one per sliding capture (6 each).
#[derive(Debug, Clone, Copy)]
pub struct StateLayout {
    /// Number of pulses / planes.
    pub n_planes: usize,
    /// Number of beams in the state.
    pub n_beams: usize,
    /// Number of sliding captures.
    pub n_captures: usize,
}

impl StateLayout {
    /// Layout matching a state.
    pub fn of(state: &CalibState) -> Self {
        Self {
            n_planes: state.planes.len(),
            n_beams: state.beams.len(),
            n_captures: state.t_c1_sl.len(),
        }
    }

    /// Total chart dimension.
    pub fn dim(&self) -> usize {
        3 * self.n_planes + 4 * self.n_beams + 6 * (2 + self.n_captures)
    }

    /// Offset of plane j.
    pub fn plane(&self, j: usize) -> usize {
        3 * j
    }

    /// Offset of beam b.
    pub fn beam(&self, b: usize) -> usize {
        3 * self.n_planes + 4 * b
    }

    /// Offset of the world → camera-1 transform.
    pub fn c1w(&self) -> usize {
        3 * self.n_planes + 4 * self.n_beams
    }

    /// Offset of the world → camera-2 transform.
    pub fn c2w(&self) -> usize {
        self.c1w() + 6
    }

    /// Offset of the sliding transform for capture l.
    pub fn sliding(&self, l: usize) -> usize {
        self.c2w() + 6 + 6 * l
    }
}

/// Solution of the joint problem: refined state, chart covariance, layout of
/// the covariance rows, and optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct MleSolution {
    /// Refined state.
    pub state: CalibState,
    /// Covariance over the flat chart vector.
    pub cov: DMatrix<f64>,
    /// Row/column layout of `cov`.
    pub layout: StateLayout,
    /// Optimizer diagnostics.
    pub report: SolveReport,
}

impl MleSolution {
    /// Per-pulse plane estimates with their 3×3 covariance blocks.
    pub fn pose_estimates(&self, data: &MleData) -> Result<Vec<PoseEstimate>, PoseError> {
        let times = data.pulse_times();
        let mut out = Vec::with_capacity(self.state.planes.len());
        for (j, plane_min) in self.state.planes.iter().enumerate() {
            let off = self.layout.plane(j);
            let cov = self.cov.view((off, off), (3, 3)).into_owned();
            out.push(PoseEstimate {
                pulse: j,
                t_s: times.get(j).copied().unwrap_or(f64::NAN),
                plane: plane_min.to_plane()?,
                cov: nalgebra::Matrix3::from_iterator(cov.iter().copied()),
            });
        }
        Ok(out)
    }
}

/// One image observation flattened out of the dataset, with its whitener.
enum ObsKind {
    /// Checkerboard corner through one transform.
    Corner { block: TBlock, x: Point3<f64> },
    /// Sliding-board laser dot (capture l, beam index b).
    SlidingDot { l: usize, b: usize },
    /// Reflected laser dot (plane j, beam index b).
    ReflectedDot { j: usize, b: usize },
}

#[derive(Clone, Copy)]
enum TBlock {
    C1W,
    C2W,
    Sliding(usize),
}

struct Obs {
    kind: ObsKind,
    uv: Vector2<f64>,
    w: nalgebra::Matrix2<f64>,
}

/// Transforms and line charts evaluated once per state.
struct StateCaches {
    c1w: TransformCache,
    c2w: TransformCache,
    sliding: Vec<TransformCache>,
    lines: Vec<LineCache>,
}

impl StateCaches {
    fn new(state: &CalibState) -> Self {
        Self {
            c1w: TransformCache::new(&state.t_c1_w),
            c2w: TransformCache::new(&state.t_c2_w),
            sliding: state.t_c1_sl.iter().map(TransformCache::new).collect(),
            lines: state.beams.iter().map(LineCache::new).collect(),
        }
    }

    fn transform(&self, block: TBlock) -> &TransformCache {
        match block {
            TBlock::C1W => &self.c1w,
            TBlock::C2W => &self.c2w,
            TBlock::Sliding(l) => &self.sliding[l],
        }
    }
}

fn flatten_observations(state: &CalibState, data: &MleData) -> Result<Vec<Obs>, PoseError> {
    if state.t_c1_sl.len() != data.captures.len() {
        return Err(PoseError::Inconsistent {
            detail: format!(
                "{} sliding transforms for {} captures",
                state.t_c1_sl.len(),
                data.captures.len()
            ),
        });
    }
    let mut obs = Vec::new();
    let mut push = |point: &ImagePoint, kind: ObsKind| -> Result<(), PoseError> {
        obs.push(Obs { kind, uv: point.uv(), w: point.whitener()? });
        Ok(())
    };
    for (l, capture) in data.captures.iter().enumerate() {
        for corner in &capture.world_corners {
            let x = data.world_board.corner_position(corner.id);
            push(&corner.point, ObsKind::Corner { block: TBlock::C1W, x })?;
        }
        for corner in &capture.sliding_corners {
            let x = data.sliding_board.corner_position(corner.id);
            push(&corner.point, ObsKind::Corner { block: TBlock::Sliding(l), x })?;
        }
        for (beam_id, point) in &capture.dots {
            let Some(b) = state.beam_index(*beam_id) else { continue };
            push(point, ObsKind::SlidingDot { l, b })?;
        }
    }
    for frame in &data.frames {
        for corner in &frame.corners {
            let x = data.world_board.corner_position(corner.id);
            push(&corner.point, ObsKind::Corner { block: TBlock::C2W, x })?;
        }
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
            push(&dot.point, ObsKind::ReflectedDot { j: dot.pulse, b })?;
        }
    }
    Ok(obs)
}

/// Jacobian block of one residual: chart offset, width, and the 2×width
/// Jacobian stored in the leading columns.
#[derive(Clone, Copy)]
struct JacBlock {
    offset: usize,
    width: usize,
    j: Matrix2x6<f64>,
}

fn pad4(j: &nalgebra::Matrix2x4<f64>) -> Matrix2x6<f64> {
    let mut out = Matrix2x6::zeros();
    out.fixed_view_mut::<2, 4>(0, 0).copy_from(j);
    out
}

fn pad3(j: &nalgebra::Matrix2x3<f64>) -> Matrix2x6<f64> {
    let mut out = Matrix2x6::zeros();
    out.fixed_view_mut::<2, 3>(0, 0).copy_from(j);
    out
}

struct NormalEq {
    h: DMatrix<f64>,
    g: DVector<f64>,
    cost: f64,
}

impl NormalEq {
    fn new(dim: usize) -> Self {
        Self { h: DMatrix::zeros(dim, dim), g: DVector::zeros(dim), cost: 0.0 }
    }

    /// Accumulates one residual: blocks hold the whitened prediction
    /// Jacobians A = W·∂f/∂block, `r` is the whitened residual W(obs − f).
    fn add(&mut self, blocks: &[JacBlock], r: &Vector2<f64>) {
        self.cost += r.norm_squared();
        for bi in blocks {
            let gi: Vector6<f64> = bi.j.transpose() * r;
            for a in 0..bi.width {
                self.g[bi.offset + a] += gi[a];
            }
            for bj in blocks {
                let hij: Matrix6<f64> = bi.j.transpose() * bj.j;
                for a in 0..bi.width {
                    for c in 0..bj.width {
                        self.h[(bi.offset + a, bj.offset + c)] += hij[(a, c)];
                    }
                }
            }
        }
    }
}

fn assemble(
    state: &CalibState,
    data: &MleData,
    obs: &[Obs],
    layout: &StateLayout,
) -> Result<NormalEq, PoseError> {
    let caches = StateCaches::new(state);
    let mut eq = NormalEq::new(layout.dim());
    for o in obs {
        match &o.kind {
            ObsKind::Corner { block, x } => {
                let cache = caches.transform(*block);
                let (uv, j_t, _) = cache.project_full(&data.k, x)?;
                let offset = match block {
                    TBlock::C1W => layout.c1w(),
                    TBlock::C2W => layout.c2w(),
                    TBlock::Sliding(l) => layout.sliding(*l),
                };
                let blocks =
                    [JacBlock { offset, width: 6, j: o.w * j_t }];
                eq.add(&blocks, &(o.w * (o.uv - uv)));
            }
            ObsKind::SlidingDot { l, b } => {
                let eval = fl_eval_cached(&caches.c1w, &caches.sliding[*l], &caches.lines[*b], &data.k)?;
                let blocks = [
                    JacBlock { offset: layout.c1w(), width: 6, j: o.w * eval.j_c1w },
                    JacBlock { offset: layout.sliding(*l), width: 6, j: o.w * eval.j_c1sl },
                    JacBlock { offset: layout.beam(*b), width: 4, j: pad4(&(o.w * eval.j_line)) },
                ];
                eq.add(&blocks, &(o.w * (o.uv - eval.uv)));
            }
            ObsKind::ReflectedDot { j, b } => {
                let eval = fr_eval_cached(&caches.c2w, &caches.lines[*b], &state.planes[*j], &data.k)?;
                let blocks = [
                    JacBlock { offset: layout.c2w(), width: 6, j: o.w * eval.j_c2w },
                    JacBlock { offset: layout.beam(*b), width: 4, j: pad4(&(o.w * eval.j_line)) },
                    JacBlock { offset: layout.plane(*j), width: 3, j: pad3(&(o.w * eval.j_plane)) },
                ];
                eq.add(&blocks, &(o.w * (o.uv - eval.uv)));
            }
        }
    }
    Ok(eq)
}

/// Whitened squared-residual sum, without Jacobians. `None` when the state
/// walks into a geometric degeneracy (a candidate to reject, not an error).
fn evaluate_cost(state: &CalibState, data: &MleData, obs: &[Obs]) -> Option<f64> {
    let caches = StateCaches::new(state);
    let mut cost = 0.0;
    for o in obs {
        let predicted = match &o.kind {
            ObsKind::Corner { block, x } => {
                caches.transform(*block).project(&data.k, x).ok()?
            }
            ObsKind::SlidingDot { l, b } => {
                fl_eval_cached(&caches.c1w, &caches.sliding[*l], &caches.lines[*b], &data.k)
                    .ok()?
                    .uv
            }
            ObsKind::ReflectedDot { j, b } => {
                fr_eval_cached(&caches.c2w, &caches.lines[*b], &state.planes[*j], &data.k)
                    .ok()?
                    .uv
            }
        };
        cost += (o.w * (o.uv - predicted)).norm_squared();
    }
    Some(cost)
}

/// Moves the state along a chart step. `None` when the step leaves the
/// manifold (non-positive moment magnitude).
fn apply_step(state: &CalibState, layout: &StateLayout, delta: &DVector<f64>) -> Option<CalibState> {
    let mut out = state.clone();
    for (j, plane) in out.planes.iter_mut().enumerate() {
        let off = layout.plane(j);
        for a in 0..3 {
            plane.p[a] += delta[off + a];
        }
    }
    for (b, beam) in out.beams.iter_mut().enumerate() {
        let off = layout.beam(b);
        for a in 0..3 {
            beam.w_l[a] += delta[off + a];
        }
        beam.m += delta[off + 3];
        if beam.m <= 0.0 {
            return None;
        }
    }
    let bump = |t: &mut crate::geom::RigidTransformMin, off: usize| {
        for a in 0..3 {
            t.w[a] += delta[off + a];
            t.t[a] += delta[off + 3 + a];
        }
    };
    bump(&mut out.t_c1_w, layout.c1w());
    bump(&mut out.t_c2_w, layout.c2w());
    for (l, t_sl) in out.t_c1_sl.iter_mut().enumerate() {
        bump(t_sl, layout.sliding(l));
    }
    Some(out)
}

/// Refines the state by Levenberg-Marquardt and returns it with its chart
/// covariance.
///
/// Every residual block must be evaluable at `init`; geometric degeneracies
/// reached during the search only reject the offending step. Accepted steps
/// never increase the cost.
pub fn solve_mle(
    init: &CalibState,
    data: &MleData,
    opts: &SolveOptions,
) -> Result<MleSolution, PoseError> {
    let layout = StateLayout::of(init);
    let obs = flatten_observations(init, data)?;
    let mut state = init.clone();
    let mut lambda = opts.lambda_init;
    let mut converged = false;
    let mut iterations = 0;
    let mut eq = assemble(&state, data, &obs, &layout)?;
    let initial_cost = eq.cost;
    let cost_floor = opts.cost_floor_per_residual * (2 * obs.len()) as f64;

    while iterations < opts.max_iters {
        iterations += 1;
        let grad_norm = eq.g.norm();
        if grad_norm < opts.grad_tol || eq.cost <= cost_floor {
            converged = true;
            break;
        }

        let mut accepted = false;
        while lambda <= 1e12 {
            let mut damped = eq.h.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * eq.h[(i, i)].max(1e-12);
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&eq.g);
            let candidate = apply_step(&state, &layout, &delta);
            let cand_cost = candidate
                .as_ref()
                .and_then(|s| evaluate_cost(s, data, &obs))
                .unwrap_or(f64::INFINITY);
            if cand_cost < eq.cost {
                state = candidate.unwrap();
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if delta.norm() < opts.step_tol
                    || eq.cost - cand_cost <= opts.cost_tol_rel * eq.cost
                {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }

        if !accepted {
            // With the damping capped, trial steps shrink toward pure
            // gradient descent; if even those cannot lower the cost, the
            // decrease left is below rounding and the fit is done.
            converged = true;
            break;
        }
        eq = assemble(&state, data, &obs, &layout)?;
        if converged {
            break;
        }
    }

    let final_eq = eq;
    let (cov, cond_estimate) = invert_normal_matrix(&final_eq.h, opts.cond_limit)?;
    let report = SolveReport {
        iterations,
        initial_cost,
        final_cost: final_eq.cost,
        grad_norm: final_eq.g.norm(),
        converged,
        residual_count: 2 * obs.len(),
        cond_estimate,
    };
    Ok(MleSolution { state, cov, layout, report })
}

/// Inverts the normal matrix by symmetric eigendecomposition, truncating
/// eigenvalues below λ_max/cond_limit when the conditioning is poor.
fn invert_normal_matrix(
    h: &DMatrix<f64>,
    cond_limit: f64,
) -> Result<(DMatrix<f64>, f64), PoseError> {
    let eig = h.clone().symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    if max_ev <= 0.0 {
        return Err(PoseError::SingularNormalEquations);
    }
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let cond = if min_ev > 0.0 { max_ev / min_ev } else { f64::INFINITY };
    let floor = max_ev / cond_limit;
    let mut inv_ev = eig.eigenvalues.clone();
    for v in inv_ev.iter_mut() {
        *v = if *v > floor { 1.0 / *v } else { 0.0 };
    }
    let q = &eig.eigenvectors;
    let cov = q * DMatrix::from_diagonal(&inv_ev) * q.transpose();
    Ok((cov, cond))
}
