//! Synthetic rig: a full forward model of the calibration hardware.
//!
//! The simulator builds the same observables the real rig would produce, from
//! known ground truth: sliding-stage captures (board corners plus beam dots),
//! scan frames (world corners plus reflected dots at scheduled pulses), and
//! the Hall-sensor log with an injected clock offset. Every estimator in the
//! crate is validated against it, from exact recovery on noise-free data to
//! Monte-Carlo covariance calibration.
//!
//! Scene layout (all millimetres, world frame on the fixed board):
//!
//! * The world board occupies the z = 0 plane, corners in the first
//!   quadrant; cameras and rig hardware sit at negative z.
//! * The mirror pivot sits a couple hundred millimetres in front of the
//!   board; its home normal bisects the incoming beams and the board
//!   direction, so reflected dots land near the board center.
//! * Laser beams travel roughly +x from sources near the slide rail, all
//!   aimed at the pivot; the spanning angle between beams is a preset knob.
//! * Sliding-board positions step along x between the sources and the
//!   mirror; camera 1 sees them and the world board, camera 2 faces the
//!   world board head on.

mod drive;
mod hallsim;
mod render;

pub use drive::{schedule_pulses, DriveConfig, Pulse, SegmentConfig};
pub use hallsim::HallSimConfig;

use nalgebra::{Matrix3, Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::beam::SlidingCapture;
use crate::camera::{CameraError, CheckerboardSpec, Intrinsics};
use crate::frame::{HomeFrame, MirrorPose, ScanSegment};
use crate::geom::{GeomError, PlaneH, PluckerLine, RigidTransformMin};
use crate::hall::HallSeries;
use crate::pose::{MleData, ScanFrame};

/// Errors from dataset synthesis.
#[derive(Debug, thiserror::Error)]
pub enum SimError {
    /// A config value is unusable.
    #[error("bad config: {0}")]
    Config(String),
    /// The drive schedule produced no pulses.
    #[error("no pulses scheduled")]
    NoPulses,
    /// A beam's reflection point wandered off the mirror aperture.
    #[error("beam {beam} misses the mirror at pulse {pulse} (offset {offset_mm:.1} mm)")]
    BeamMissesMirror { beam: usize, pulse: usize, offset_mm: f64 },
    /// A rendered dot or corner fell outside a board or the image.
    #[error("{what} out of bounds at {context}")]
    OutOfBounds { what: String, context: String },
    /// Projection failure while rendering.
    #[error(transparent)]
    Camera(#[from] CameraError),
    /// Geometry failure while rendering.
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// One laser beam: id, source point, unit direction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeamConfig {
    /// Beam id.
    pub id: usize,
    /// Source point (mm).
    pub source: Point3<f64>,
    /// Propagation direction (unit).
    pub dir: Vector3<f64>,
}

impl BeamConfig {
    /// The beam as a Plücker line.
    pub fn line(&self) -> Result<PluckerLine, GeomError> {
        PluckerLine::from_point_dir(&self.source, self.dir)
    }
}

/// Static rig geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Shared camera intrinsics.
    pub k: Intrinsics,
    /// Image width and height (px).
    pub image_size: (u32, u32),
    /// Fixed board on z = 0.
    pub world_board: CheckerboardSpec,
    /// Board riding the slide rail.
    pub sliding_board: CheckerboardSpec,
    /// Mirror pivot (mm).
    pub mirror_center: Point3<f64>,
    /// Mirror normal at rest (unit, facing the beam sources).
    pub mirror_home_normal: Vector3<f64>,
    /// Fast rotation axis (unit, in the rest mirror plane).
    pub fast_axis: Vector3<f64>,
    /// Reflection points farther than this from the pivot are misses (mm).
    pub mirror_aperture_mm: f64,
    /// The beams.
    pub beams: Vec<BeamConfig>,
    /// Camera-1 center (mm).
    pub c1_eye: Point3<f64>,
    /// Camera-1 look-at target (mm).
    pub c1_target: Point3<f64>,
    /// Camera-2 center (mm).
    pub c2_eye: Point3<f64>,
    /// Camera-2 look-at target (mm).
    pub c2_target: Point3<f64>,
    /// Slide-rail x positions of the sliding board origin reference (mm).
    pub sliding_x: Vec<f64>,
    /// Sliding-board plane normal (unit, facing beams and camera 1).
    pub sliding_normal: Vector3<f64>,
    /// World y of the sliding board's local-x origin edge (mm).
    pub sliding_y0: f64,
    /// World z of the sliding board's local-y origin edge (mm).
    pub sliding_z0: f64,
}

impl SceneConfig {
    /// Reference rig with a given mean spanning angle between the two
    /// calibration beams' light-path normals (degrees). Beam 2 is the extra
    /// beam that hold-out validation predicts.
    ///
    /// The spanning angle is measured between light-path plane normals, not
    /// between the beams themselves, so the beam separation that realizes a
    /// requested span depends on the rig geometry. The tables below were
    /// measured on noise-free renders and are inverted by interpolation.
    pub fn preset(span_deg: f64) -> Self {
        // (beam separation, measured mean span), both in degrees.
        const FAR: &[(f64, f64)] = &[
            (10.0, 13.92),
            (13.0, 18.07),
            (16.0, 22.19),
            (20.0, 27.65),
            (24.0, 33.05),
            (28.0, 38.39),
            (33.0, 44.95),
        ];
        const CLOSE: &[(f64, f64)] = &[
            (26.0, 35.73),
            (30.0, 41.03),
            (34.0, 46.24),
            (38.0, 51.38),
        ];
        let close = span_deg > 35.0;
        let table = if close { CLOSE } else { FAR };
        Self::preset_raw(invert_span_table(table, span_deg), close)
    }

    /// Rig with the beam separation given directly; `close` moves the mirror
    /// nearer the fixed board so wide fans stay inside it.
    pub(crate) fn preset_raw(separation_deg: f64, close: bool) -> Self {
        let mirror_z = if close { -140.0 } else { -200.0 };
        let mirror_center = Point3::new(90.0, 120.0, mirror_z);
        let half = (separation_deg / 2.0).to_radians();
        let source_dist = 400.0;
        let beam_dir = |about_z: f64, about_y: f64| {
            let (sz, cz) = f64::sin_cos(about_z);
            let (sy, cy) = f64::sin_cos(about_y);
            Vector3::new(cz * cy, sz * cy, sy)
        };
        let mk_beam = |id: usize, dir: Vector3<f64>, perp: Vector3<f64>| BeamConfig {
            id,
            source: mirror_center + perp - source_dist * dir,
            dir,
        };
        let beams = vec![
            mk_beam(0, beam_dir(half, 0.0), Vector3::new(0.0, 1.1, 0.7)),
            mk_beam(1, beam_dir(-half, 0.0), Vector3::new(0.0, -0.9, -1.3)),
            mk_beam(2, beam_dir(10.0_f64.to_radians(), 2.0_f64.to_radians()), Vector3::new(0.0, 0.6, -0.8)),
        ];
        // Wider fans sweep more y at the rail, so the captures move closer
        // to the mirror to keep the dots on the sliding board.
        let sliding_x: Vec<f64> = if separation_deg <= 22.0 {
            vec![-260.0, -215.0, -170.0, -125.0, -80.0]
        } else {
            vec![-180.0, -155.0, -130.0, -105.0, -80.0]
        };
        Self {
            k: Intrinsics { fx: 1200.0, fy: 1200.0, cx: 800.0, cy: 600.0 },
            image_size: (1600, 1200),
            world_board: CheckerboardSpec { rows: 25, cols: 19, cell_mm: 10.0 },
            sliding_board: CheckerboardSpec { rows: 8, cols: 25, cell_mm: 10.0 },
            mirror_center,
            mirror_home_normal: Vector3::new(-1.0, 0.0, 1.0).normalize(),
            fast_axis: Vector3::y(),
            mirror_aperture_mm: 25.0,
            beams,
            c1_eye: Point3::new(-40.0, 120.0, -600.0),
            c1_target: Point3::new(-40.0, 120.0, 0.0),
            c2_eye: Point3::new(90.0, 120.0, -500.0),
            c2_target: Point3::new(90.0, 120.0, 0.0),
            sliding_x,
            sliding_normal: Vector3::new(-1.0, 0.0, -1.0).normalize(),
            sliding_y0: 0.0,
            sliding_z0: mirror_z + 26.5,
        }
    }

    /// Keeps only the listed beams (by id).
    pub fn with_beams(mut self, ids: &[usize]) -> Self {
        self.beams.retain(|b| ids.contains(&b.id));
        self
    }

    /// World → camera-1 extrinsics.
    pub fn t_c1_w(&self) -> Result<RigidTransformMin, SimError> {
        render::look_at(&self.c1_eye, &self.c1_target)
    }

    /// World → camera-2 extrinsics.
    pub fn t_c2_w(&self) -> Result<RigidTransformMin, SimError> {
        render::look_at(&self.c2_eye, &self.c2_target)
    }

    /// Sliding-board frame → world transform for capture l.
    ///
    /// The board's local axes are x along world +y, y along the in-plane
    /// downhill direction, z along `sliding_normal`.
    pub fn t_w_sl(&self, l: usize) -> Result<RigidTransformMin, SimError> {
        let n = self.sliding_normal;
        let x_b = Vector3::y();
        let y_b = n.cross(&x_b);
        let r = Matrix3::from_columns(&[x_b, y_b, n]);
        let origin = Vector3::new(self.sliding_x[l], self.sliding_y0, self.sliding_z0);
        RigidTransformMin::from_rt(&r, origin)
            .map_err(|e| SimError::Config(format!("sliding orientation: {e}")))
    }

    /// Home frame of the mirror as ground truth.
    pub fn home_frame(&self) -> HomeFrame {
        let n0 = self.mirror_home_normal;
        let e_f = (self.fast_axis - self.fast_axis.dot(&n0) * n0).normalize();
        let r0 = Matrix3::from_columns(&[e_f, n0.cross(&e_f), n0]);
        let home_plane = PlaneH {
            n: n0,
            d: -n0.dot(&self.mirror_center.coords),
        };
        HomeFrame {
            r0,
            origin: self.mirror_center,
            home_plane,
            axis_normal_dot: 0.0,
            origin_ambiguous: false,
            piston_amp_mm: 0.0,
            piston_hz: 0.0,
        }
    }

    /// Mirror plane in {W} for a pose in the home frame.
    pub fn mirror_plane(&self, pose: &MirrorPose) -> PlaneH {
        self.home_frame().pose_plane_world(pose)
    }
}

/// Beam separation that realizes a requested span, by piecewise-linear
/// interpolation of `(separation, span)` pairs. Extrapolates with the end
/// slopes outside the table.
fn invert_span_table(table: &[(f64, f64)], span_deg: f64) -> f64 {
    let seg = table
        .windows(2)
        .find(|w| span_deg <= w[1].1)
        .unwrap_or_else(|| &table[table.len() - 2..]);
    let (p0, s0) = seg[0];
    let (p1, s1) = seg[1];
    p0 + (span_deg - s0) * (p1 - p0) / (s1 - s0)
}

/// Observation noise levels and the dataset seed.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Checkerboard corner noise (px, isotropic).
    pub corner_sigma_px: f64,
    /// Laser-dot centroid noise (px, isotropic).
    pub dot_sigma_px: f64,
    /// Master seed for all sampled noise.
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { corner_sigma_px: 0.5, dot_sigma_px: 0.2, seed: 0 }
    }
}

/// Full scan recipe: drives, pulse levels, segments, noise, optional Hall log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Drive frequencies, phases, and gains.
    pub drive: DriveConfig,
    /// Scan timeline.
    pub segments: Vec<SegmentConfig>,
    /// Drive-difference levels c_k that trigger pulses.
    pub pulse_levels: Vec<f64>,
    /// Pulse rate while the mirror rests in the home segment (Hz).
    pub home_strobe_hz: f64,
    /// Keep only the first N pulses.
    pub max_pulses: Option<usize>,
    /// Observation noise.
    pub noise: NoiseConfig,
    /// Synthesize a Hall log alongside the scan.
    pub hall: Option<HallSimConfig>,
}

impl ScanConfig {
    /// Two-axis scan with a short home and fast-only preamble, the layout
    /// the home-frame stage expects.
    pub fn preset_scan() -> Self {
        Self {
            drive: DriveConfig::default(),
            segments: vec![
                SegmentConfig { kind: ScanSegment::Home, duration_s: 1.0, amp1: 0.0, amp2: 0.0, amp_piston: 0.0 },
                SegmentConfig { kind: ScanSegment::FastOnly, duration_s: 2.0, amp1: 1.0, amp2: 0.0, amp_piston: 0.0 },
                SegmentConfig { kind: ScanSegment::TwoAxis, duration_s: 16.0, amp1: 1.0, amp2: 1.0, amp_piston: 0.0 },
            ],
            pulse_levels: vec![-0.6, 0.0, 0.7],
            home_strobe_hz: 4.0,
            max_pulses: None,
            noise: NoiseConfig::default(),
            hall: None,
        }
    }

    /// Pure two-axis scan without the preamble.
    pub fn preset_two_axis(duration_s: f64, piston_amp: f64) -> Self {
        let mut cfg = Self::preset_scan();
        cfg.segments = vec![SegmentConfig {
            kind: ScanSegment::TwoAxis,
            duration_s,
            amp1: 1.0,
            amp2: 1.0,
            amp_piston: piston_amp,
        }];
        cfg
    }
}

/// Ground truth behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// World → camera 1.
    pub t_c1_w: RigidTransformMin,
    /// World → camera 2.
    pub t_c2_w: RigidTransformMin,
    /// Sliding board → camera 1 per capture.
    pub t_c1_sl: Vec<RigidTransformMin>,
    /// Beam lines by beam id.
    pub beams: Vec<(usize, PluckerLine)>,
    /// Mirror plane per pulse.
    pub planes: Vec<PlaneH>,
    /// Mirror pose per pulse (home frame).
    pub poses: Vec<MirrorPose>,
    /// Pulse times (s).
    pub pulse_times: Vec<f64>,
    /// The true home frame.
    pub home: HomeFrame,
    /// Injected Hall clock offset (s), if a Hall log was made.
    pub hall_dt_s: Option<f64>,
}

/// A complete synthetic dataset: observations plus ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    /// Scene used to build it.
    pub scene: SceneConfig,
    /// Scan recipe used to build it.
    pub scan: ScanConfig,
    /// Sliding-stage captures.
    pub captures: Vec<SlidingCapture>,
    /// Scan-stage frames, one per pulse.
    pub frames: Vec<ScanFrame>,
    /// Segment tag per pulse.
    pub segments: Vec<ScanSegment>,
    /// Actuated-run Hall log.
    pub hall_actual: Option<HallSeries>,
    /// Background Hall log.
    pub hall_background: Option<HallSeries>,
    /// Ground truth.
    pub truth: GroundTruth,
}

impl SyntheticDataset {
    /// The estimator-facing view of the observations.
    pub fn mle_data(&self) -> MleData {
        MleData {
            k: self.scene.k,
            world_board: self.scene.world_board,
            sliding_board: self.scene.sliding_board,
            captures: self.captures.clone(),
            frames: self.frames.clone(),
        }
    }

    /// Ground-truth poses paired with pulse times, as Hall training targets.
    pub fn truth_pose_series(&self) -> Vec<(f64, MirrorPose)> {
        self.truth
            .pulse_times
            .iter()
            .copied()
            .zip(self.truth.poses.iter().copied())
            .collect()
    }
}

/// Builds a synthetic dataset from a scene and a scan recipe.
pub fn generate(scene: &SceneConfig, scan: &ScanConfig) -> Result<SyntheticDataset, SimError> {
    validate(scene, scan)?;
    let mut rng = ChaCha8Rng::seed_from_u64(scan.noise.seed);

    let pulses = schedule_pulses(&scan.drive, &scan.segments, &scan.pulse_levels, scan.home_strobe_hz)?;
    let pulses: Vec<Pulse> = match scan.max_pulses {
        Some(n) => pulses.into_iter().take(n).collect(),
        None => pulses,
    };
    if pulses.is_empty() {
        return Err(SimError::NoPulses);
    }

    let t_c1_w = scene.t_c1_w()?;
    let t_c2_w = scene.t_c2_w()?;
    let home = scene.home_frame();

    let mut planes = Vec::with_capacity(pulses.len());
    let mut poses = Vec::with_capacity(pulses.len());
    let mut segments = Vec::with_capacity(pulses.len());
    let mut pulse_times = Vec::with_capacity(pulses.len());
    for pulse in &pulses {
        let pose = scan.drive.pose_at(pulse.t_s, &pulse.amps);
        planes.push(home.pose_plane_world(&pose));
        poses.push(pose);
        segments.push(pulse.segment);
        pulse_times.push(pulse.t_s);
    }

    let captures = render::render_captures(scene, &t_c1_w, &scan.noise, &mut rng)?;
    let frames = render::render_frames(scene, &t_c2_w, &planes, &pulse_times, &scan.noise, &mut rng)?;

    let mut t_c1_sl = Vec::with_capacity(scene.sliding_x.len());
    for l in 0..scene.sliding_x.len() {
        let t_w_sl = scene.t_w_sl(l)?;
        t_c1_sl.push(
            t_c1_w
                .compose(&t_w_sl)
                .map_err(|e| SimError::Config(format!("sliding compose: {e}")))?,
        );
    }

    let beams: Vec<(usize, PluckerLine)> = scene
        .beams
        .iter()
        .map(|b| Ok((b.id, b.line()?)))
        .collect::<Result<_, GeomError>>()?;

    let (hall_actual, hall_background, hall_dt_s) = match &scan.hall {
        Some(cfg) => {
            let (actual, background) =
                hallsim::synthesize(cfg, &scan.drive, &scan.segments, &mut rng);
            (Some(actual), Some(background), Some(cfg.dt_inject_s))
        }
        None => (None, None, None),
    };

    Ok(SyntheticDataset {
        scene: scene.clone(),
        scan: scan.clone(),
        captures,
        frames,
        segments,
        hall_actual,
        hall_background,
        truth: GroundTruth {
            t_c1_w,
            t_c2_w,
            t_c1_sl,
            beams,
            planes,
            poses,
            pulse_times,
            home,
            hall_dt_s,
        },
    })
}

fn validate(scene: &SceneConfig, scan: &ScanConfig) -> Result<(), SimError> {
    if scene.beams.is_empty() {
        return Err(SimError::Config("no beams".into()));
    }
    if scene.sliding_x.len() < 2 {
        return Err(SimError::Config("need at least two sliding positions".into()));
    }
    for beam in &scene.beams {
        if (beam.dir.norm() - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(format!("beam {} direction not unit", beam.id)));
        }
    }
    if scan.segments.is_empty() {
        return Err(SimError::Config("no scan segments".into()));
    }
    if scan.pulse_levels.is_empty() {
        return Err(SimError::Config("no pulse levels".into()));
    }
    Ok(())
}
