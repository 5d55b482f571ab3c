//! Hall-sensor pose model: mapping the magnetic field log to mirror poses.
//!
//! The scanner's magnet moves with the mirror, so a fixed three-axis Hall
//! sensor sees a field that encodes the pose. Calibration regresses the
//! optically estimated poses (tilt α, tilt β, piston d) on features built
//! from the field log, jointly estimating the constant offset δt between the
//! sensor clock and the camera/trigger clock.
//!
//! Two feature families:
//!
//! * linear: [B(t + δt); 1] — the interpolated foreground field itself.
//! * sine: [sin(2π f_k (t + δt) + φ_k); 1] — one sinusoid per drive axis,
//!   with f_k and φ_k fitted to the field log beforehand. At prediction
//!   time this family consumes only timestamps, which makes it immune to
//!   baseline drift or steps in the field log.
//!
//! The phases are deliberately pinned to the field log: letting them float
//! against the pose fit would absorb any δt (three composite phases cannot
//! determine three phases plus an offset), so δt is profiled on the pose-fit
//! error with the tone parameters held fixed.

use std::path::Path;

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::frame::MirrorPose;

/// Timestamped three-axis field samples, strictly increasing in time.
#[derive(Debug, Clone, PartialEq)]
pub struct HallSeries {
    /// Sample times (s).
    pub t: Vec<f64>,
    /// Field samples (arbitrary sensor units).
    pub b: Vec<Vector3<f64>>,
}

/// Errors from Hall calibration.
#[derive(Debug, thiserror::Error)]
pub enum HallError {
    /// File or CSV shape problem.
    #[error("hall csv: {0}")]
    Csv(String),
    /// Timestamps must be strictly increasing.
    #[error("non-monotonic timestamp at row {index}")]
    NonMonotonicTime { index: usize },
    /// A series with no samples.
    #[error("empty hall series")]
    EmptySeries,
    /// Mismatched series/pose inputs.
    #[error("mismatched inputs: {detail}")]
    MismatchedInputs { detail: String },
    /// No spectral peak stands out and no fallback frequency was given.
    #[error("cannot estimate drive frequency for component {component}")]
    FrequencyEstimationFailed { component: usize },
    /// Too few poses to fit the model.
    #[error("{got} poses, need at least {need}")]
    InsufficientPoses { got: usize, need: usize },
    /// The feature normal matrix is singular (constant or collinear features).
    #[error("singular feature matrix in least squares")]
    SingularFit,
    /// No pose time survives the δt search window inside the series range.
    #[error("no pose time lies inside the hall series for the searched offsets")]
    NoOverlap,
}

impl HallSeries {
    /// Builds a series, validating monotone timestamps.
    pub fn new(t: Vec<f64>, b: Vec<Vector3<f64>>) -> Result<Self, HallError> {
        if t.len() != b.len() {
            return Err(HallError::MismatchedInputs {
                detail: format!("{} times, {} samples", t.len(), b.len()),
            });
        }
        if t.is_empty() {
            return Err(HallError::EmptySeries);
        }
        for i in 1..t.len() {
            if t[i] <= t[i - 1] {
                return Err(HallError::NonMonotonicTime { index: i });
            }
        }
        Ok(Self { t, b })
    }

    /// Number of samples.
    pub fn len(&self) -> usize {
        self.t.len()
    }

    /// Whether the series is empty.
    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Linearly interpolated sample; `None` outside the covered range.
    pub fn sample(&self, time: f64) -> Option<Vector3<f64>> {
        let t = &self.t;
        if time < t[0] || time > *t.last().unwrap() {
            return None;
        }
        let i = match t.binary_search_by(|x| x.partial_cmp(&time).unwrap()) {
            Ok(i) => return Some(self.b[i]),
            Err(i) => i,
        };
        let (i0, i1) = (i - 1, i);
        let w = (time - t[i0]) / (t[i1] - t[i0]);
        Some(self.b[i0].lerp(&self.b[i1], w))
    }

    /// Reads `t,bx,by,bz` rows from a CSV file.
    pub fn read_csv(path: &Path) -> Result<Self, HallError> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| HallError::Csv(e.to_string()))?;
        let mut t = Vec::new();
        let mut b = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| HallError::Csv(e.to_string()))?;
            if row.len() != 4 {
                return Err(HallError::Csv(format!("row {i} has {} fields, want 4", row.len())));
            }
            let parse = |j: usize| -> Result<f64, HallError> {
                row[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| HallError::Csv(format!("row {i} field {j}: {e}")))
            };
            t.push(parse(0)?);
            b.push(Vector3::new(parse(1)?, parse(2)?, parse(3)?));
        }
        Self::new(t, b)
    }

    /// Writes `t,bx,by,bz` rows to a CSV file.
    pub fn write_csv(&self, path: &Path) -> Result<(), HallError> {
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| HallError::Csv(e.to_string()))?;
        writer
            .write_record(["t", "bx", "by", "bz"])
            .map_err(|e| HallError::Csv(e.to_string()))?;
        for (t, b) in self.t.iter().zip(&self.b) {
            writer
                .write_record([
                    format!("{t:.9}"),
                    format!("{:.9}", b.x),
                    format!("{:.9}", b.y),
                    format!("{:.9}", b.z),
                ])
                .map_err(|e| HallError::Csv(e.to_string()))?;
        }
        writer.flush().map_err(|e| HallError::Csv(e.to_string()))?;
        Ok(())
    }

    /// One scalar component as (t, x) slices.
    fn component(&self, k: usize) -> Vec<f64> {
        self.b.iter().map(|b| b[k]).collect()
    }
}

/// Foreground field: the actuated-run log minus the background log
/// interpolated onto its timestamps. Samples outside the background's range
/// are dropped.
pub fn foreground(actual: &HallSeries, background: &HallSeries) -> Result<HallSeries, HallError> {
    let mut t = Vec::new();
    let mut b = Vec::new();
    for (time, sample) in actual.t.iter().zip(&actual.b) {
        if let Some(bg) = background.sample(*time) {
            t.push(*time);
            b.push(sample - bg);
        }
    }
    HallSeries::new(t, b)
}

/// Which feature family a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HallModelKind {
    /// Features are the interpolated field samples.
    Linear,
    /// Features are drive-frequency sinusoids of the timestamp.
    Sine,
}

/// A fitted field → pose model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HallModel {
    /// Feature family.
    pub kind: HallModelKind,
    /// 3×4 coefficient matrix mapping [features; 1] to (α rad, β rad, d mm).
    pub a: Matrix3x4<f64>,
    /// Sensor-clock minus trigger-clock offset (s): the sample aligned with
    /// a pose at trigger time t carries timestamp t + dt_s.
    pub dt_s: f64,
    /// Drive frequencies (Hz); zeros for the linear model.
    pub f_hz: [f64; 3],
    /// Tone phases at the sensor clock (rad); zeros for the linear model.
    pub phi_rad: [f64; 3],
    /// Root-mean-square training residual over all pose components
    /// (angles in degrees, piston in mm).
    pub train_rmse: f64,
}

impl HallModel {
    /// Feature vector for a pose at trigger time `t`.
    ///
    /// The linear family needs the foreground `series`; the sine family
    /// ignores it. `None` when the shifted time leaves the series.
    pub fn features(&self, t: f64, series: Option<&HallSeries>) -> Option<Vector4<f64>> {
        match self.kind {
            HallModelKind::Linear => {
                let b = series?.sample(t + self.dt_s)?;
                Some(Vector4::new(b.x, b.y, b.z, 1.0))
            }
            HallModelKind::Sine => {
                let mut f = Vector4::new(0.0, 0.0, 0.0, 1.0);
                for k in 0..3 {
                    f[k] = (2.0 * std::f64::consts::PI * self.f_hz[k] * (t + self.dt_s)
                        + self.phi_rad[k])
                        .sin();
                }
                Some(f)
            }
        }
    }

    /// Predicted pose at trigger time `t`.
    pub fn predict(&self, t: f64, series: Option<&HallSeries>) -> Option<MirrorPose> {
        let x = self.features(t, series)?;
        let y = self.a * x;
        Some(MirrorPose { alpha_rad: y.x, beta_rad: y.y, d_mm: y.z })
    }
}

/// Pose targets as vectors (α rad, β rad, d mm).
fn pose_vec(p: &MirrorPose) -> Vector3<f64> {
    Vector3::new(p.alpha_rad, p.beta_rad, p.d_mm)
}

/// Root-mean-square of residuals with angles in degrees and piston in mm.
fn mixed_rmse(residuals: &[Vector3<f64>]) -> f64 {
    if residuals.is_empty() {
        return f64::NAN;
    }
    let mut acc = 0.0;
    for r in residuals {
        let deg0 = r.x.to_degrees();
        let deg1 = r.y.to_degrees();
        acc += deg0 * deg0 + deg1 * deg1 + r.z * r.z;
    }
    (acc / (3.0 * residuals.len() as f64)).sqrt()
}

/// Closed-form row-wise least squares: A = (Σ y xᵀ)(Σ x xᵀ)⁻¹.
fn lstsq(features: &[Vector4<f64>], targets: &[Vector3<f64>]) -> Result<Matrix3x4<f64>, HallError> {
    let mut gram = Matrix4::<f64>::zeros();
    let mut cross = Matrix3x4::<f64>::zeros();
    for (x, y) in features.iter().zip(targets) {
        gram += x * x.transpose();
        cross += y * x.transpose();
    }
    let inv = gram.try_inverse().ok_or(HallError::SingularFit)?;
    Ok(cross * inv)
}

fn weighted_sse(
    a: &Matrix3x4<f64>,
    features: &[Vector4<f64>],
    targets: &[Vector3<f64>],
    weights: &Vector3<f64>,
) -> f64 {
    features
        .iter()
        .zip(targets)
        .map(|(x, y)| {
            let r = y - a * x;
            weights.x * r.x * r.x + weights.y * r.y * r.y + weights.z * r.z * r.z
        })
        .sum()
}

/// Inverse per-component residual variance, floored against exact fits.
fn residual_weights(
    a: &Matrix3x4<f64>,
    features: &[Vector4<f64>],
    targets: &[Vector3<f64>],
) -> Vector3<f64> {
    let n = targets.len().max(1) as f64;
    let mut var = Vector3::zeros();
    let mut scale = Vector3::zeros();
    for (x, y) in features.iter().zip(targets) {
        let r = y - a * x;
        var += r.component_mul(&r);
        scale += y.component_mul(y);
    }
    var.zip_map(&scale, |v, s| n / (v + 1e-12 * s).max(1e-300))
}

/// Golden-section minimization on [lo, hi].
fn golden_min(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, iters: usize) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Single-tone least squares x ≈ p·sin(2πft) + q·cos(2πft) + c at fixed f.
///
/// Returns (p, q, c, sse).
fn tone_ls(t: &[f64], x: &[f64], f: f64) -> (f64, f64, f64, f64) {
    let omega = 2.0 * std::f64::consts::PI * f;
    let mut m = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&ti, &xi) in t.iter().zip(x) {
        let (s, c) = (omega * ti).sin_cos();
        let g = Vector3::new(s, c, 1.0);
        m += g * g.transpose();
        rhs += g * xi;
    }
    let sol = m.try_inverse().map(|inv| inv * rhs).unwrap_or_else(Vector3::zeros);
    let mut err = 0.0;
    for (&ti, &xi) in t.iter().zip(x) {
        let (s, c) = (omega * ti).sin_cos();
        let r = xi - (sol.x * s + sol.y * c + sol.z);
        err += r * r;
    }
    (sol.x, sol.y, sol.z, err)
}

/// Dominant frequency of one component by FFT peak picking.
///
/// The spectrum (Hann-windowed, mean removed) must have a peak at least 18 dB
/// above the median bin magnitude; `None` otherwise. The peak bin is then
/// refined by golden section on the single-tone residual.
fn estimate_tone_frequency(t: &[f64], x: &[f64]) -> Option<f64> {
    let n = t.len();
    if n < 16 {
        return None;
    }
    // The FFT needs uniform samples, but the input may have gaps (the split
    // evaluation removes test-pose stretches). Resample at the median
    // spacing; the exact timestamps come back in during refinement.
    let mut diffs: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dt = diffs[diffs.len() / 2];
    if dt <= 0.0 {
        return None;
    }
    let n_u = ((t[n - 1] - t[0]) / dt).round() as usize + 1;
    if n_u < 16 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = (0..n_u)
        .map(|i| {
            let xi = lerp_series(t, x, t[0] + i as f64 * dt) - mean;
            let w = 0.5
                * (1.0
                    - (2.0 * std::f64::consts::PI * i as f64 / (n_u as f64 - 1.0)).cos());
            Complex::new(xi * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n_u).process(&mut buf);

    let half = n_u / 2;
    let mags: Vec<f64> = (1..half).map(|i| buf[i].norm()).collect();
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let (peak_idx, peak_mag) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    // White noise alone reaches about 4x the median over thousands of
    // bins, so a genuine tone must clear a wider margin.
    if *peak_mag < 8.0 * median.max(1e-300) {
        return None;
    }
    let bin_hz = 1.0 / (dt * n_u as f64);
    let f0 = (peak_idx + 1) as f64 * bin_hz;
    let refined = golden_min(
        |f| tone_ls(t, x, f).3,
        (f0 - bin_hz).max(bin_hz * 0.25),
        f0 + bin_hz,
        60,
    );
    Some(refined)
}

/// Linear interpolation of (t, x) samples at query time q; clamps outside.
fn lerp_series(t: &[f64], x: &[f64], q: f64) -> f64 {
    let i = t.partition_point(|&ti| ti < q);
    if i == 0 {
        return x[0];
    }
    if i >= t.len() {
        return x[x.len() - 1];
    }
    let span = t[i] - t[i - 1];
    if span <= 0.0 {
        return x[i];
    }
    let w = (q - t[i - 1]) / span;
    x[i - 1] * (1.0 - w) + x[i] * w
}

/// Tone parameters of one field component: frequency, phase, amplitude.
#[derive(Debug, Clone, Copy)]
pub struct ToneEstimate {
    /// Frequency (Hz).
    pub f_hz: f64,
    /// Phase at t = 0 of the sensor clock (rad), for x ≈ a·sin(2πft + φ) + c.
    pub phi_rad: f64,
    /// Amplitude.
    pub amplitude: f64,
}

/// Fits one sinusoid per component of the foreground series.
///
/// Components whose spectrum shows no clear peak fall back to the matching
/// entry of `fallback_hz`; with no fallback the fit fails.
pub fn estimate_tones(
    series: &HallSeries,
    fallback_hz: Option<[f64; 3]>,
) -> Result<[ToneEstimate; 3], HallError> {
    let mut out = [ToneEstimate { f_hz: 0.0, phi_rad: 0.0, amplitude: 0.0 }; 3];
    for k in 0..3 {
        let x = series.component(k);
        let f = match estimate_tone_frequency(&series.t, &x) {
            Some(f) => f,
            None => match fallback_hz {
                Some(fb) => fb[k],
                None => return Err(HallError::FrequencyEstimationFailed { component: k }),
            },
        };
        let (p, q, _c, _) = tone_ls(&series.t, &x, f);
        out[k] = ToneEstimate {
            f_hz: f,
            phi_rad: q.atan2(p),
            amplitude: (p * p + q * q).sqrt(),
        };
    }
    Ok(out)
}

/// δt search configuration.
#[derive(Debug, Clone, Copy)]
pub struct OffsetSearch {
    /// Half-width of the grid around zero (s).
    pub half_window_s: f64,
    /// Grid spacing (s).
    pub step_s: f64,
}

impl Default for OffsetSearch {
    fn default() -> Self {
        Self { half_window_s: 0.05, step_s: 0.5e-3 }
    }
}

/// Profiles the pose-fit SSE over δt: grid at `step_s`, then golden section
/// around the best cell. `features(dt, j)` returns the feature vector of
/// pose j at candidate offset dt, or `None` if unavailable.
fn profile_offset(
    search: &OffsetSearch,
    times: &[f64],
    targets: &[Vector3<f64>],
    mut feature_at: impl FnMut(f64, usize) -> Option<Vector4<f64>>,
) -> Result<(f64, Matrix3x4<f64>, Vec<usize>), HallError> {
    // Poses usable at every candidate offset, so all offsets compare on the
    // same data.
    let extremes = [-search.half_window_s, search.half_window_s];
    let usable: Vec<usize> = (0..times.len())
        .filter(|&j| extremes.iter().all(|&dt| feature_at(dt, j).is_some()))
        .collect();
    if usable.len() < 8 {
        return Err(HallError::NoOverlap);
    }
    let sub_targets: Vec<Vector3<f64>> = usable.iter().map(|&j| targets[j]).collect();

    let mut eval = |dt: f64| -> f64 {
        let feats: Option<Vec<Vector4<f64>>> =
            usable.iter().map(|&j| feature_at(dt, j)).collect();
        let Some(feats) = feats else { return f64::INFINITY };
        match lstsq(&feats, &sub_targets) {
            Ok(a) => sse(&a, &feats, &sub_targets),
            Err(_) => f64::INFINITY,
        }
    };

    let steps = (search.half_window_s / search.step_s).ceil() as i64;
    let mut best_dt = 0.0;
    let mut best = f64::INFINITY;
    for i in -steps..=steps {
        let dt = i as f64 * search.step_s;
        let e = eval(dt);
        if e < best {
            best = e;
            best_dt = dt;
        }
    }
    if !best.is_finite() {
        return Err(HallError::NoOverlap);
    }
    let dt = golden_min(&mut eval, best_dt - search.step_s, best_dt + search.step_s, 50);
    let dt = if eval(dt) <= eval(best_dt) { dt } else { best_dt };

    let feats: Vec<Vector4<f64>> =
        usable.iter().map(|&j| feature_at(dt, j).unwrap()).collect();
    let a = lstsq(&feats, &sub_targets)?;
    Ok((dt, a, usable))
}

/// Fits the linear model y = A[B(t + δt); 1] with a profiled time offset.
pub fn fit_linear(
    poses: &[(f64, MirrorPose)],
    series: &HallSeries,
    search: &OffsetSearch,
) -> Result<HallModel, HallError> {
    if poses.len() < 8 {
        return Err(HallError::InsufficientPoses { got: poses.len(), need: 8 });
    }
    let times: Vec<f64> = poses.iter().map(|(t, _)| *t).collect();
    let targets: Vec<Vector3<f64>> = poses.iter().map(|(_, p)| pose_vec(p)).collect();
    let (dt, a, usable) = profile_offset(search, &times, &targets, |dt, j| {
        series
            .sample(times[j] + dt)
            .map(|b| Vector4::new(b.x, b.y, b.z, 1.0))
    })?;

    let residuals: Vec<Vector3<f64>> = usable
        .iter()
        .map(|&j| {
            let b = series.sample(times[j] + dt).unwrap();
            targets[j] - a * Vector4::new(b.x, b.y, b.z, 1.0)
        })
        .collect();
    Ok(HallModel {
        kind: HallModelKind::Linear,
        a,
        dt_s: dt,
        f_hz: [0.0; 3],
        phi_rad: [0.0; 3],
        train_rmse: mixed_rmse(&residuals),
    })
}

/// Fits the sine model y = A[sin(2πf_k(t + δt) + φ_k); 1].
///
/// Tones are fitted to the foreground series first; δt is then profiled on
/// the pose fit with the tones fixed.
pub fn fit_sine(
    poses: &[(f64, MirrorPose)],
    series: &HallSeries,
    fallback_hz: Option<[f64; 3]>,
    search: &OffsetSearch,
) -> Result<HallModel, HallError> {
    if poses.len() < 8 {
        return Err(HallError::InsufficientPoses { got: poses.len(), need: 8 });
    }
    let tones = estimate_tones(series, fallback_hz)?;
    let times: Vec<f64> = poses.iter().map(|(t, _)| *t).collect();
    let targets: Vec<Vector3<f64>> = poses.iter().map(|(_, p)| pose_vec(p)).collect();

    let sine_features = |dt: f64, j: usize| -> Option<Vector4<f64>> {
        let mut f = Vector4::new(0.0, 0.0, 0.0, 1.0);
        for k in 0..3 {
            f[k] = (2.0 * std::f64::consts::PI * tones[k].f_hz * (times[j] + dt)
                + tones[k].phi_rad)
                .sin();
        }
        Some(f)
    };
    let (dt, a, usable) = profile_offset(search, &times, &targets, sine_features)?;

    let residuals: Vec<Vector3<f64>> = usable
        .iter()
        .map(|&j| targets[j] - a * sine_features(dt, j).unwrap())
        .collect();
    Ok(HallModel {
        kind: HallModelKind::Sine,
        a,
        dt_s: dt,
        f_hz: [tones[0].f_hz, tones[1].f_hz, tones[2].f_hz],
        phi_rad: [tones[0].phi_rad, tones[1].phi_rad, tones[2].phi_rad],
        train_rmse: mixed_rmse(&residuals),
    })
}

/// Train/evaluate configuration for [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    /// Feature family under test.
    pub kind: HallModelKind,
    /// Number of random splits.
    pub repeats: usize,
    /// Fraction of poses in the training split.
    pub train_fraction: f64,
    /// Seed for the split shuffles.
    pub seed: u64,
    /// Fallback drive frequencies for the sine tones.
    pub fallback_hz: Option<[f64; 3]>,
    /// δt search settings.
    pub search: OffsetSearch,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            kind: HallModelKind::Sine,
            repeats: 50,
            train_fraction: 0.8,
            seed: 0,
            fallback_hz: None,
            search: OffsetSearch::default(),
        }
    }
}

/// Held-out accuracy of one feature family over repeated random splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean test RMSE per pose component (α °, β °, d mm).
    pub rmse_mean: [f64; 3],
    /// Standard deviation of the test RMSE per component across splits.
    pub rmse_sd: [f64; 3],
    /// Mean fitted δt across splits (s).
    pub dt_mean_s: f64,
    /// Splits actually evaluated.
    pub repeats: usize,
}

/// Repeated-random-split evaluation.
///
/// Poses are shuffled and split train/test by index; Hall samples are
/// assigned to their nearest pose by time, and only samples assigned to
/// training poses are used to fit tones and features. Test features for the
/// linear family still interpolate the full series, as a deployed sensor
/// stream would.
pub fn evaluate(
    poses: &[(f64, MirrorPose)],
    series: &HallSeries,
    opts: &EvalOptions,
) -> Result<EvalReport, HallError> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    if poses.len() < 10 {
        return Err(HallError::InsufficientPoses { got: poses.len(), need: 10 });
    }
    let n_train = ((poses.len() as f64) * opts.train_fraction).round() as usize;
    let n_train = n_train.clamp(8, poses.len() - 1);

    // Nearest-pose assignment of every hall sample.
    let pose_times: Vec<f64> = poses.iter().map(|(t, _)| *t).collect();
    let assignment: Vec<usize> = series
        .t
        .iter()
        .map(|&ts| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, &tp) in pose_times.iter().enumerate() {
                let d = (ts - tp).abs();
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect();

    let mut per_split: Vec<[f64; 3]> = Vec::with_capacity(opts.repeats);
    let mut dt_sum = 0.0;
    for rep in 0..opts.repeats {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(rep as u64));
        let mut idx: Vec<usize> = (0..poses.len()).collect();
        idx.shuffle(&mut rng);
        let train_idx: Vec<usize> = idx[..n_train].to_vec();
        let test_idx: Vec<usize> = idx[n_train..].to_vec();

        let train_mask: Vec<bool> = {
            let mut m = vec![false; poses.len()];
            for &j in &train_idx {
                m[j] = true;
            }
            m
        };
        let train_series = {
            let mut t = Vec::new();
            let mut b = Vec::new();
            for (i, &a) in assignment.iter().enumerate() {
                if train_mask[a] {
                    t.push(series.t[i]);
                    b.push(series.b[i]);
                }
            }
            HallSeries::new(t, b)?
        };
        let train_poses: Vec<(f64, MirrorPose)> =
            train_idx.iter().map(|&j| poses[j]).collect();

        let model = match opts.kind {
            HallModelKind::Linear => fit_linear(&train_poses, &train_series, &opts.search)?,
            HallModelKind::Sine => {
                fit_sine(&train_poses, &train_series, opts.fallback_hz, &opts.search)?
            }
        };
        dt_sum += model.dt_s;

        let mut acc = [0.0_f64; 3];
        let mut count = 0usize;
        for &j in &test_idx {
            let (t, truth) = poses[j];
            let Some(pred) = model.predict(t, Some(series)) else { continue };
            acc[0] += (pred.alpha_rad - truth.alpha_rad).to_degrees().powi(2);
            acc[1] += (pred.beta_rad - truth.beta_rad).to_degrees().powi(2);
            acc[2] += (pred.d_mm - truth.d_mm).powi(2);
            count += 1;
        }
        if count == 0 {
            return Err(HallError::NoOverlap);
        }
        per_split.push([
            (acc[0] / count as f64).sqrt(),
            (acc[1] / count as f64).sqrt(),
            (acc[2] / count as f64).sqrt(),
        ]);
    }

    let reps = per_split.len();
    let mut mean = [0.0_f64; 3];
    for s in &per_split {
        for k in 0..3 {
            mean[k] += s[k];
        }
    }
    for m in &mut mean {
        *m /= reps as f64;
    }
    let mut sd = [0.0_f64; 3];
    for s in &per_split {
        for k in 0..3 {
            sd[k] += (s[k] - mean[k]).powi(2);
        }
    }
    for v in &mut sd {
        *v = (*v / (reps as f64 - 1.0).max(1.0)).sqrt();
    }

    Ok(EvalReport {
        rmse_mean: mean,
        rmse_sd: sd,
        dt_mean_s: dt_sum / reps as f64,
        repeats: reps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

    fn tone_series(
        f: [f64; 3],
        phi: [f64; 3],
        amp: [f64; 3],
        rate_hz: f64,
        duration_s: f64,
        noise_sd: f64,
        seed: u64,
    ) -> HallSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = (duration_s * rate_hz) as usize;
        let mut t = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let ti = i as f64 / rate_hz;
            t.push(ti);
            b.push(Vector3::new(
                amp[0] * (TWO_PI * f[0] * ti + phi[0]).sin() + noise_sd * rng.gen_range(-1.73..1.73),
                amp[1] * (TWO_PI * f[1] * ti + phi[1]).sin() + noise_sd * rng.gen_range(-1.73..1.73),
                amp[2] * (TWO_PI * f[2] * ti + phi[2]).sin() + noise_sd * rng.gen_range(-1.73..1.73),
            ));
        }
        HallSeries::new(t, b).unwrap()
    }

    /// Poses generated from the same tones: y = A*[sin; 1], scheduled at
    /// irregular trigger times.
    fn tone_poses(
        a: &Matrix3x4<f64>,
        f: [f64; 3],
        phi: [f64; 3],
        times: &[f64],
    ) -> Vec<(f64, MirrorPose)> {
        times
            .iter()
            .map(|&t| {
                let x = Vector4::new(
                    (TWO_PI * f[0] * t + phi[0]).sin(),
                    (TWO_PI * f[1] * t + phi[1]).sin(),
                    (TWO_PI * f[2] * t + phi[2]).sin(),
                    1.0,
                );
                let y = a * x;
                (t, MirrorPose { alpha_rad: y.x, beta_rad: y.y, d_mm: y.z })
            })
            .collect()
    }

    fn demo_coeffs() -> Matrix3x4<f64> {
        Matrix3x4::new(
            0.10, 0.01, 0.002, 0.001, //
            0.008, 0.075, -0.003, -0.002, //
            0.05, -0.04, 0.30, 0.01,
        )
    }

    fn demo_times(n: usize) -> Vec<f64> {
        // Incommensurate spacing so the poses do not alias the drives.
        (0..n).map(|j| 0.2 + j as f64 * 0.111_317).collect()
    }

    #[test]
    fn interpolation_is_linear_between_samples() {
        let s = HallSeries::new(
            vec![0.0, 1.0],
            vec![Vector3::new(0.0, 2.0, -1.0), Vector3::new(1.0, 0.0, 3.0)],
        )
        .unwrap();
        assert_abs_diff_eq!(
            s.sample(0.25).unwrap(),
            Vector3::new(0.25, 1.5, 0.0),
            epsilon = 1e-15
        );
        assert!(s.sample(-0.1).is_none());
        assert!(s.sample(1.1).is_none());
    }

    #[test]
    fn non_monotonic_time_is_rejected() {
        let r = HallSeries::new(
            vec![0.0, 1.0, 1.0],
            vec![Vector3::zeros(), Vector3::zeros(), Vector3::zeros()],
        );
        assert!(matches!(r, Err(HallError::NonMonotonicTime { index: 2 })));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("hall.csv");
        let s = tone_series([5.0, 7.0, 2.0], [0.1, 0.2, 0.3], [1.0, 1.0, 1.0], 200.0, 1.0, 0.0, 1);
        s.write_csv(&path).unwrap();
        let back = HallSeries::read_csv(&path).unwrap();
        assert_eq!(back.len(), s.len());
        for i in 0..s.len() {
            assert_abs_diff_eq!(back.t[i], s.t[i], epsilon = 1e-8);
            assert_abs_diff_eq!(back.b[i], s.b[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn foreground_subtracts_background() {
        let fg = tone_series([5.0, 6.0, 7.0], [0.0; 3], [1.0; 3], 100.0, 2.0, 0.0, 2);
        let bg_field = Vector3::new(0.5, -0.25, 0.125);
        let actual = HallSeries::new(
            fg.t.clone(),
            fg.b.iter().map(|b| b + bg_field).collect(),
        )
        .unwrap();
        let bg = HallSeries::new(
            vec![-1.0, 5.0],
            vec![bg_field, bg_field],
        )
        .unwrap();
        let out = foreground(&actual, &bg).unwrap();
        for (a, b) in out.b.iter().zip(&fg.b) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn tone_frequency_estimate_is_sharp() {
        let s = tone_series([7.3, 11.0, 3.1], [0.4, -0.9, 1.7], [1.0; 3], 1000.0, 20.0, 0.02, 3);
        let tones = estimate_tones(&s, None).unwrap();
        assert_abs_diff_eq!(tones[0].f_hz, 7.3, epsilon = 5e-4);
        assert_abs_diff_eq!(tones[1].f_hz, 11.0, epsilon = 5e-4);
        assert_abs_diff_eq!(tones[2].f_hz, 3.1, epsilon = 5e-4);
        for (k, truth) in [0.4, -0.9, 1.7].into_iter().enumerate() {
            let mut dphi = tones[k].phi_rad - truth;
            while dphi > std::f64::consts::PI {
                dphi -= TWO_PI;
            }
            while dphi < -std::f64::consts::PI {
                dphi += TWO_PI;
            }
            assert!(dphi.abs() < 0.02, "component {k}: phase error {dphi}");
        }
    }

    #[test]
    fn flat_spectrum_needs_fallback() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 2000;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 1e-3).collect();
        let b: Vec<Vector3<f64>> = (0..n)
            .map(|_| Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let s = HallSeries::new(t, b).unwrap();
        assert!(matches!(
            estimate_tones(&s, None),
            Err(HallError::FrequencyEstimationFailed { .. })
        ));
        let with_fb = estimate_tones(&s, Some([5.0, 6.0, 7.0])).unwrap();
        assert_abs_diff_eq!(with_fb[0].f_hz, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn sine_fit_recovers_coefficients_and_zero_offset() {
        let f = [5.0, 6.3, 1.9];
        let phi = [0.3, -1.1, 2.0];
        let a = demo_coeffs();
        let series = tone_series(f, phi, [1.0, 0.8, 1.2], 1000.0, 25.0, 0.0, 5);
        let poses = tone_poses(&a, f, phi, &demo_times(180));
        let model = fit_sine(&poses, &series, None, &OffsetSearch::default()).unwrap();
        assert!(model.dt_s.abs() < 2e-4, "dt {}", model.dt_s);
        assert!(model.train_rmse < 1e-3, "train rmse {}", model.train_rmse);
        // Prediction matches ground truth away from the training poses.
        let probe = 7.777;
        let x = Vector4::new(
            (TWO_PI * f[0] * probe + phi[0]).sin(),
            (TWO_PI * f[1] * probe + phi[1]).sin(),
            (TWO_PI * f[2] * probe + phi[2]).sin(),
            1.0,
        );
        let y = a * x;
        let pred = model.predict(probe, None).unwrap();
        assert_abs_diff_eq!(pred.alpha_rad, y.x, epsilon = 1e-4);
        assert_abs_diff_eq!(pred.beta_rad, y.y, epsilon = 1e-4);
        assert_abs_diff_eq!(pred.d_mm, y.z, epsilon = 1e-3);
    }

    #[test]
    fn linear_fit_recovers_exact_map() {
        let f = [5.0, 6.3, 1.9];
        let phi = [0.3, -1.1, 2.0];
        let a = demo_coeffs();
        let series = tone_series(f, phi, [1.0, 0.8, 1.2], 1000.0, 25.0, 0.0, 6);
        // Poses generated directly from the series values: y = A[B(t); 1].
        let poses: Vec<(f64, MirrorPose)> = demo_times(150)
            .iter()
            .map(|&t| {
                let b = series.sample(t).unwrap();
                let y = a * Vector4::new(b.x, b.y, b.z, 1.0);
                (t, MirrorPose { alpha_rad: y.x, beta_rad: y.y, d_mm: y.z })
            })
            .collect();
        let model = fit_linear(&poses, &series, &OffsetSearch::default()).unwrap();
        assert!(model.dt_s.abs() < 2e-4, "dt {}", model.dt_s);
        for r in 0..3 {
            for c in 0..4 {
                assert_abs_diff_eq!(model.a[(r, c)], a[(r, c)], epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn injected_latency_is_recovered_by_both_families() {
        let f = [5.0, 6.3, 1.9];
        let phi = [0.3, -1.1, 2.0];
        let a = demo_coeffs();
        let dt_true = 3.7e-3;
        // The log lags: a sample stamped tau carries the field of tau − δt,
        // equivalently the tone phases are delayed by δt.
        let phi_logged = [
            phi[0] - TWO_PI * f[0] * dt_true,
            phi[1] - TWO_PI * f[1] * dt_true,
            phi[2] - TWO_PI * f[2] * dt_true,
        ];
        let series = tone_series(f, phi_logged, [1.0, 0.8, 1.2], 1000.0, 25.0, 0.005, 7);
        let poses = tone_poses(&a, f, phi, &demo_times(180));

        let sine = fit_sine(&poses, &series, None, &OffsetSearch::default()).unwrap();
        assert_abs_diff_eq!(sine.dt_s, dt_true, epsilon = 5e-4);

        let linear = fit_linear(&poses, &series, &OffsetSearch::default()).unwrap();
        assert_abs_diff_eq!(linear.dt_s, dt_true, epsilon = 5e-4);
    }

    #[test]
    fn evaluation_is_deterministic_per_seed() {
        let f = [5.0, 6.3, 1.9];
        let phi = [0.3, -1.1, 2.0];
        let a = demo_coeffs();
        let series = tone_series(f, phi, [1.0, 0.8, 1.2], 500.0, 25.0, 0.01, 8);
        let poses = tone_poses(&a, f, phi, &demo_times(120));
        let opts = EvalOptions { repeats: 5, seed: 42, ..EvalOptions::default() };
        let r1 = evaluate(&poses, &series, &opts).unwrap();
        let r2 = evaluate(&poses, &series, &opts).unwrap();
        assert_eq!(r1.rmse_mean, r2.rmse_mean);
        assert_eq!(r1.rmse_sd, r2.rmse_sd);
        assert!(r1.rmse_mean.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sine_family_shrugs_off_baseline_step() {
        let f = [5.0, 6.3, 1.9];
        let phi = [0.3, -1.1, 2.0];
        let a = demo_coeffs();
        let clean = tone_series(f, phi, [1.0, 0.8, 1.2], 500.0, 25.0, 0.002, 9);
        // Baseline step halfway through the log.
        let t_mid = 12.5;
        let shifted = HallSeries::new(
            clean.t.clone(),
            clean
                .t
                .iter()
                .zip(&clean.b)
                .map(|(&t, b)| {
                    if t > t_mid {
                        b + Vector3::new(0.3, -0.2, 0.25)
                    } else {
                        *b
                    }
                })
                .collect(),
        )
        .unwrap();
        let poses = tone_poses(&a, f, phi, &demo_times(180));

        let opts_sine = EvalOptions {
            kind: HallModelKind::Sine,
            repeats: 8,
            seed: 3,
            fallback_hz: Some(f),
            ..EvalOptions::default()
        };
        let opts_lin = EvalOptions { kind: HallModelKind::Linear, ..opts_sine };

        let clean_sine = evaluate(&poses, &clean, &opts_sine).unwrap();
        let clean_lin = evaluate(&poses, &clean, &opts_lin).unwrap();
        let shifted_sine = evaluate(&poses, &shifted, &opts_sine).unwrap();
        let shifted_lin = evaluate(&poses, &shifted, &opts_lin).unwrap();

        let degrade = |a: &EvalReport, b: &EvalReport| -> f64 {
            (0..3).map(|k| b.rmse_mean[k] - a.rmse_mean[k]).sum::<f64>()
        };
        let sine_degrade = degrade(&clean_sine, &shifted_sine);
        let lin_degrade = degrade(&clean_lin, &shifted_lin);
        assert!(
            sine_degrade < lin_degrade,
            "sine degraded {sine_degrade}, linear {lin_degrade}"
        );
    }

    #[test]
    fn too_few_poses_is_rejected() {
        let series = tone_series([5.0, 6.0, 7.0], [0.0; 3], [1.0; 3], 100.0, 2.0, 0.0, 10);
        let poses = vec![(0.5, MirrorPose { alpha_rad: 0.0, beta_rad: 0.0, d_mm: 0.0 }); 4];
        assert!(matches!(
            fit_linear(&poses, &series, &OffsetSearch::default()),
            Err(HallError::InsufficientPoses { .. })
        ));
    }
}
