//! Mirror drive signals and pulse scheduling.
//!
//! The mirror is driven by three sinusoids: two tilt channels and a piston
//! channel. Camera pulses fire when the difference of the two tilt drives
//! crosses one of a set of fixed levels while both drives are rising, which
//! spreads the sampled poses over the reachable tilt range. Crossing times
//! are located on a fine grid and polished by bisection well below the
//! nanosecond level, so pulse timestamps behave like an ideal trigger clock.

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::frame::{MirrorPose, ScanSegment};

/// Drive frequencies, phases, and per-unit gains.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Fast-axis drive frequency (Hz).
    pub f1_hz: f64,
    /// Slow-axis drive frequency (Hz).
    pub f2_hz: f64,
    /// Piston drive frequency (Hz).
    pub f_piston_hz: f64,
    /// Fast-axis drive phase (rad).
    pub phase1_rad: f64,
    /// Slow-axis drive phase (rad).
    pub phase2_rad: f64,
    /// Piston drive phase (rad).
    pub phase_piston_rad: f64,
    /// Tilt alpha per unit drive (rad).
    pub gain1_rad: f64,
    /// Tilt beta per unit drive (rad).
    pub gain2_rad: f64,
    /// Piston displacement per unit drive (mm).
    pub gain_piston_mm: f64,
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self {
            f1_hz: 5.0,
            f2_hz: 6.3,
            f_piston_hz: 1.7,
            phase1_rad: 0.4,
            phase2_rad: 1.1,
            phase_piston_rad: 0.0,
            gain1_rad: (4.37_f64 / 2.0).to_radians(),
            gain2_rad: (17.17_f64 / 2.0).to_radians(),
            gain_piston_mm: 1.04 / 2.0,
        }
    }
}

impl DriveConfig {
    /// Unit-amplitude drive signals at time t.
    pub fn signals(&self, t: f64) -> [f64; 3] {
        [
            (2.0 * std::f64::consts::PI * self.f1_hz * t + self.phase1_rad).sin(),
            (2.0 * std::f64::consts::PI * self.f2_hz * t + self.phase2_rad).sin(),
            (2.0 * std::f64::consts::PI * self.f_piston_hz * t + self.phase_piston_rad).sin(),
        ]
    }

    /// Unit-amplitude drive derivatives at time t.
    pub fn signal_rates(&self, t: f64) -> [f64; 3] {
        let w1 = 2.0 * std::f64::consts::PI * self.f1_hz;
        let w2 = 2.0 * std::f64::consts::PI * self.f2_hz;
        let wp = 2.0 * std::f64::consts::PI * self.f_piston_hz;
        [
            w1 * (w1 * t + self.phase1_rad).cos(),
            w2 * (w2 * t + self.phase2_rad).cos(),
            wp * (wp * t + self.phase_piston_rad).cos(),
        ]
    }

    /// Mirror pose at time t under segment amplitudes [amp1, amp2, piston].
    pub fn pose_at(&self, t: f64, amps: &[f64; 3]) -> MirrorPose {
        let s = self.signals(t);
        MirrorPose {
            alpha_rad: self.gain1_rad * amps[0] * s[0],
            beta_rad: self.gain2_rad * amps[1] * s[1],
            d_mm: self.gain_piston_mm * amps[2] * s[2],
        }
    }

    /// The slowest nonzero drive period (s).
    pub fn slowest_period_s(&self) -> f64 {
        let mut f = f64::INFINITY;
        for fi in [self.f1_hz, self.f2_hz, self.f_piston_hz] {
            if fi > 0.0 && fi < f {
                f = fi;
            }
        }
        if f.is_finite() {
            1.0 / f
        } else {
            1.0
        }
    }
}

/// One stretch of the scan timeline with fixed drive amplitudes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SegmentConfig {
    /// What the segment exercises.
    pub kind: ScanSegment,
    /// Segment length (s).
    pub duration_s: f64,
    /// Fast-axis drive amplitude.
    pub amp1: f64,
    /// Slow-axis drive amplitude.
    pub amp2: f64,
    /// Piston drive amplitude.
    pub amp_piston: f64,
}

/// A scheduled camera pulse.
#[derive(Debug, Clone, Copy)]
pub struct Pulse {
    /// Trigger time (s).
    pub t_s: f64,
    /// Segment the pulse belongs to.
    pub segment: ScanSegment,
    /// Drive amplitudes in force at the pulse.
    pub amps: [f64; 3],
}

/// Pulses closer than this are one trigger (s).
const PULSE_DEDUPE_S: f64 = 1e-9;

/// Schedules all pulses over the scan timeline.
///
/// Within each segment, a pulse fires whenever amp1*s1 - amp2*s2 crosses a
/// level c_k with every active tilt drive rising; drives with zero amplitude
/// are exempt from the rising gate. Two special cases keep degenerate
/// segments useful: with both tilt drives off, pulses strobe at a fixed
/// rate, and with identical tilt drives the difference vanishes, so the
/// zero level falls back to rising zero crossings of the fast drive alone.
pub fn schedule_pulses(
    drive: &DriveConfig,
    segments: &[SegmentConfig],
    levels: &[f64],
    strobe_hz: f64,
) -> Result<Vec<Pulse>, SimError> {
    let mut pulses: Vec<Pulse> = Vec::new();
    let mut t0 = 0.0;
    for seg in segments {
        if seg.duration_s <= 0.0 {
            return Err(SimError::Config("segment duration must be positive".into()));
        }
        let t1 = t0 + seg.duration_s;
        let amps = [seg.amp1, seg.amp2, seg.amp_piston];
        if seg.amp1 == 0.0 && seg.amp2 == 0.0 {
            if strobe_hz <= 0.0 {
                return Err(SimError::Config("home strobe rate must be positive".into()));
            }
            let n = (seg.duration_s * strobe_hz).floor() as usize;
            for i in 0..n {
                pulses.push(Pulse {
                    t_s: t0 + (i as f64 + 0.5) / strobe_hz,
                    segment: seg.kind,
                    amps,
                });
            }
        } else if identical_tilt_drives(drive, seg) {
            for &c in levels {
                if c.abs() < 1e-12 {
                    collect_crossings(drive, seg, t0, t1, CrossingKind::FastZero, &mut pulses);
                }
            }
        } else {
            for &c in levels {
                collect_crossings(drive, seg, t0, t1, CrossingKind::Difference(c), &mut pulses);
            }
        }
        t0 = t1;
    }
    pulses.sort_by(|a, b| a.t_s.total_cmp(&b.t_s));
    pulses.dedup_by(|b, a| (b.t_s - a.t_s).abs() < PULSE_DEDUPE_S);
    Ok(pulses)
}

fn identical_tilt_drives(drive: &DriveConfig, seg: &SegmentConfig) -> bool {
    seg.amp1 == seg.amp2
        && seg.amp1 != 0.0
        && drive.f1_hz == drive.f2_hz
        && drive.phase1_rad == drive.phase2_rad
}

#[derive(Clone, Copy)]
enum CrossingKind {
    /// amp1*s1 - amp2*s2 = c with rising active drives.
    Difference(f64),
    /// s1 = 0 rising.
    FastZero,
}

fn collect_crossings(
    drive: &DriveConfig,
    seg: &SegmentConfig,
    t0: f64,
    t1: f64,
    kind: CrossingKind,
    out: &mut Vec<Pulse>,
) {
    let g = |t: f64| -> f64 {
        let s = drive.signals(t);
        match kind {
            CrossingKind::Difference(c) => seg.amp1 * s[0] - seg.amp2 * s[1] - c,
            CrossingKind::FastZero => s[0],
        }
    };
    let gate = |t: f64| -> bool {
        let r = drive.signal_rates(t);
        match kind {
            CrossingKind::Difference(_) => {
                (seg.amp1 == 0.0 || r[0] > 0.0) && (seg.amp2 == 0.0 || r[1] > 0.0)
            }
            CrossingKind::FastZero => r[0] > 0.0,
        }
    };
    let f_max = drive.f1_hz.max(drive.f2_hz).max(1e-3);
    let step = 1.0 / (128.0 * f_max);
    let amps = [seg.amp1, seg.amp2, seg.amp_piston];
    let mut ta = t0;
    let mut ga = g(ta);
    while ta < t1 {
        let tb = (ta + step).min(t1);
        let gb = g(tb);
        if ga == 0.0 && gate(ta) {
            out.push(Pulse { t_s: ta, segment: seg.kind, amps });
        } else if ga * gb < 0.0 {
            let t = bisect(&g, ta, tb);
            if gate(t) {
                out.push(Pulse { t_s: t, segment: seg.kind, amps });
            }
        }
        ta = tb;
        ga = gb;
    }
}

fn bisect(g: &dyn Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let mut ga = g(a);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        let gm = g(m);
        if gm == 0.0 {
            return m;
        }
        if ga * gm < 0.0 {
            b = m;
        } else {
            a = m;
            ga = gm;
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(kind: ScanSegment, duration_s: f64, amp1: f64, amp2: f64) -> SegmentConfig {
        SegmentConfig { kind, duration_s, amp1, amp2, amp_piston: 0.0 }
    }

    #[test]
    fn crossings_satisfy_level_and_rising_gate() {
        let drive = DriveConfig::default();
        let segs = [seg(ScanSegment::TwoAxis, 10.0, 1.0, 1.0)];
        let pulses = schedule_pulses(&drive, &segs, &[-0.6, 0.0, 0.7], 4.0).unwrap();
        assert!(pulses.len() > 25, "got {} pulses", pulses.len());
        for p in &pulses {
            let s = drive.signals(p.t_s);
            let diff = s[0] - s[1];
            let hit = [-0.6, 0.0, 0.7]
                .iter()
                .map(|c| (diff - c).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(hit < 1e-9, "level residual {hit}");
            let r = drive.signal_rates(p.t_s);
            assert!(r[0] > 0.0 && r[1] > 0.0);
        }
        for w in pulses.windows(2) {
            assert!(w[1].t_s > w[0].t_s);
        }
    }

    #[test]
    fn home_segment_strobes_uniformly() {
        let drive = DriveConfig::default();
        let segs = [seg(ScanSegment::Home, 2.0, 0.0, 0.0)];
        let pulses = schedule_pulses(&drive, &segs, &[0.0], 4.0).unwrap();
        assert_eq!(pulses.len(), 8);
        for (i, p) in pulses.iter().enumerate() {
            assert!((p.t_s - (i as f64 + 0.5) / 4.0).abs() < 1e-12);
            assert_eq!(p.segment, ScanSegment::Home);
        }
    }

    #[test]
    fn fast_only_segment_ignores_slow_gate() {
        let drive = DriveConfig::default();
        let segs = [seg(ScanSegment::FastOnly, 3.0, 1.0, 0.0)];
        let pulses = schedule_pulses(&drive, &segs, &[0.0, 0.5], 4.0).unwrap();
        assert!(pulses.len() > 10);
        for p in &pulses {
            let r = drive.signal_rates(p.t_s);
            assert!(r[0] > 0.0);
        }
    }

    #[test]
    fn identical_drives_fall_back_to_fast_zero_crossings() {
        let drive = DriveConfig {
            f2_hz: 5.0,
            phase2_rad: 0.4,
            ..DriveConfig::default()
        };
        let segs = [seg(ScanSegment::TwoAxis, 2.0, 1.0, 1.0)];
        let pulses = schedule_pulses(&drive, &segs, &[0.0, 0.5], 4.0).unwrap();
        assert_eq!(pulses.len(), 10);
        for p in &pulses {
            let s = drive.signals(p.t_s);
            assert!(s[0].abs() < 1e-9);
            assert!(drive.signal_rates(p.t_s)[0] > 0.0);
        }
    }
}
