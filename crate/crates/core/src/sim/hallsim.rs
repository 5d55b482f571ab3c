//! Hall-sensor log synthesis.
//!
//! The sensor sees a field that mixes the three drive channels through a
//! sensitivity matrix plus a mild per-channel quadratic, on top of an
//! environment term (offset, slow drift, optional mid-run step). The logger
//! clock lags the trigger clock: a sample stamped tau holds the field from
//! tau - dt, which is the offset the calibration stage must recover. The
//! background log is a separate coils-off run covering the same span, so
//! foreground subtraction removes the environment but not the mid-run step.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::drive::{DriveConfig, SegmentConfig};
use crate::hall::HallSeries;

/// A field step during the actuated run only.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BaselineStep {
    /// When the step lands (s).
    pub t_s: f64,
    /// Step size per component.
    pub delta: Vector3<f64>,
}

/// Hall-log synthesis parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HallSimConfig {
    /// Actuated-run sample rate (Hz).
    pub rate_hz: f64,
    /// Background-run sample rate (Hz).
    pub background_rate_hz: f64,
    /// Per-sample field noise (field units).
    pub noise_sd: f64,
    /// Logger clock lag behind the trigger clock (s).
    pub dt_inject_s: f64,
    /// Field per unit drive, rows are field components.
    pub sensitivity: Matrix3<f64>,
    /// Quadratic field term per channel.
    pub quadratic: Vector3<f64>,
    /// Static environment field.
    pub offset: Vector3<f64>,
    /// Environment drift (field units per s).
    pub drift_per_s: Vector3<f64>,
    /// Optional actuated-run-only step.
    pub baseline_step: Option<BaselineStep>,
}

impl HallSimConfig {
    /// Reference sensor with a given injected clock lag.
    pub fn preset(dt_inject_s: f64) -> Self {
        Self {
            rate_hz: 1000.0,
            background_rate_hz: 200.0,
            noise_sd: 0.02,
            dt_inject_s,
            sensitivity: Matrix3::new(
                1.0, 0.06, 0.02, //
                0.05, 0.9, 0.04, //
                0.03, 0.05, 1.1,
            ),
            quadratic: Vector3::new(0.03, 0.04, 0.02),
            offset: Vector3::new(0.31, -0.14, 0.22),
            drift_per_s: Vector3::new(1.0e-4, -5.0e-5, 8.0e-5),
            baseline_step: None,
        }
    }
}

/// Drive-induced field at true time t.
fn field(cfg: &HallSimConfig, drive: &DriveConfig, segments: &[SegmentConfig], t: f64) -> Vector3<f64> {
    let amps = amps_at(segments, t);
    let s = drive.signals(t);
    let u = Vector3::new(amps[0] * s[0], amps[1] * s[1], amps[2] * s[2]);
    cfg.sensitivity * u + cfg.quadratic.component_mul(&u.component_mul(&u))
}

/// Segment amplitudes in force at time t, clamped to the timeline ends.
fn amps_at(segments: &[SegmentConfig], t: f64) -> [f64; 3] {
    let mut t0 = 0.0;
    for (i, seg) in segments.iter().enumerate() {
        let t1 = t0 + seg.duration_s;
        if t < t1 || i + 1 == segments.len() {
            return [seg.amp1, seg.amp2, seg.amp_piston];
        }
        t0 = t1;
    }
    [0.0, 0.0, 0.0]
}

fn environment(cfg: &HallSimConfig, t: f64) -> Vector3<f64> {
    cfg.offset + cfg.drift_per_s * t
}

fn noise3(sd: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    if sd == 0.0 {
        return Vector3::zeros();
    }
    Vector3::new(
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
        sd * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Builds the actuated and background logs for a scan timeline.
pub fn synthesize(
    cfg: &HallSimConfig,
    drive: &DriveConfig,
    segments: &[SegmentConfig],
    rng: &mut ChaCha8Rng,
) -> (HallSeries, HallSeries) {
    let total_s: f64 = segments.iter().map(|s| s.duration_s).sum();
    let margin_s = 0.5;

    let n_bg = ((total_s + 2.0 * margin_s) * cfg.background_rate_hz).floor() as usize;
    let mut bg_t = Vec::with_capacity(n_bg);
    let mut bg_b = Vec::with_capacity(n_bg);
    for i in 0..n_bg {
        let tau = -margin_s + i as f64 / cfg.background_rate_hz;
        bg_t.push(tau);
        bg_b.push(environment(cfg, tau) + noise3(cfg.noise_sd, rng));
    }

    let n = (total_s * cfg.rate_hz).floor() as usize;
    let mut t = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for i in 0..n {
        let tau = i as f64 / cfg.rate_hz;
        let mut value = field(cfg, drive, segments, tau - cfg.dt_inject_s)
            + environment(cfg, tau)
            + noise3(cfg.noise_sd, rng);
        if let Some(step) = &cfg.baseline_step {
            if tau >= step.t_s {
                value += step.delta;
            }
        }
        t.push(tau);
        b.push(value);
    }

    let actual = HallSeries::new(t, b).expect("actual stamps are strictly increasing");
    let background = HallSeries::new(bg_t, bg_b).expect("background stamps are strictly increasing");
    (actual, background)
}
