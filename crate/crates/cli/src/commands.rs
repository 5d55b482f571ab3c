//! Subcommand implementations.
//!
//! Every command reads and writes files inside one dataset directory using
//! the standard names in [`msmcal_core::dataset::files`], so commands can be
//! chained without plumbing paths between them.

use std::path::Path;

use serde::Deserialize;

use msmcal_core::dataset::{
    self, files, BeamsEstimateFile, HallModelFile, HomeFrameRecord, PoseRecord, PosesFile,
};
use msmcal_core::frame::{estimate_home_frame, FrameOptions, MirrorPose, ScanSegment};
use msmcal_core::hall::{self, EvalOptions, HallModelKind, HallSeries, OffsetSearch};
use msmcal_core::pose::{
    init_state_with, predict_heldout, solve_mle, spanning_angle_stats, MleData, SolveOptions,
};
use msmcal_core::sim::{self, HallSimConfig, ScanConfig, SceneConfig};

use crate::CliError;

/// Simulation recipe accepted by `simulate --config`.
///
/// Every field has a default, so `{}` is a valid recipe. `scene` and `scan`
/// replace the presets wholesale; the scalar knobs then apply on top of
/// whichever base is in effect.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSpec {
    /// Mean spanning angle of the beam pair (degrees).
    pub span_deg: f64,
    /// Beams to keep, by id (0 and 1 are the pair, 2 the hold-out beam).
    pub beams: Vec<usize>,
    /// Full scene override.
    pub scene: Option<SceneConfig>,
    /// Full scan override.
    pub scan: Option<ScanConfig>,
    /// Replace the scan timeline with a single two-axis segment this long (s).
    pub two_axis_s: Option<f64>,
    /// Piston drive amplitude multiplier on two-axis segments.
    pub piston_amp: f64,
    /// Keep only the first N pulses.
    pub max_pulses: Option<usize>,
    /// Corner centroid noise (px).
    pub corner_sigma_px: f64,
    /// Dot centroid noise (px).
    pub dot_sigma_px: f64,
    /// Noise seed.
    pub seed: u64,
    /// Synthesize a Hall log.
    pub hall: bool,
    /// Clock lag injected into the Hall log (ms).
    pub hall_dt_ms: f64,
    /// Full Hall generator override; wins over `hall`/`hall_dt_ms`.
    pub hall_config: Option<HallSimConfig>,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self {
            span_deg: 27.0,
            beams: vec![0, 1, 2],
            scene: None,
            scan: None,
            two_axis_s: None,
            piston_amp: 1.0,
            max_pulses: None,
            corner_sigma_px: 0.5,
            dot_sigma_px: 0.2,
            seed: 0,
            hall: true,
            hall_dt_ms: 0.0,
            hall_config: None,
        }
    }
}

impl SimulateSpec {
    /// Resolves the recipe into a concrete scene and scan.
    pub fn build(&self) -> (SceneConfig, ScanConfig) {
        let scene = self
            .scene
            .clone()
            .unwrap_or_else(|| SceneConfig::preset(self.span_deg).with_beams(&self.beams));
        let mut scan = self.scan.clone().unwrap_or_else(|| match self.two_axis_s {
            Some(duration) => ScanConfig::preset_two_axis(duration, self.piston_amp),
            None => ScanConfig::preset_scan(),
        });
        if self.scan.is_none() && self.two_axis_s.is_none() {
            for segment in &mut scan.segments {
                if segment.kind == ScanSegment::TwoAxis {
                    segment.amp_piston = self.piston_amp;
                }
            }
        }
        scan.max_pulses = self.max_pulses;
        scan.noise.corner_sigma_px = self.corner_sigma_px;
        scan.noise.dot_sigma_px = self.dot_sigma_px;
        scan.noise.seed = self.seed;
        scan.hall = self
            .hall_config
            .clone()
            .or_else(|| self.hall.then(|| HallSimConfig::preset(self.hall_dt_ms * 1e-3)));
        (scene, scan)
    }
}

/// `simulate`: render a dataset directory from a recipe.
pub fn simulate(
    dir: &Path,
    config: Option<&Path>,
    seed: Option<u64>,
    span_deg: Option<f64>,
    max_pulses: Option<usize>,
) -> Result<(), CliError> {
    let mut spec: SimulateSpec = match config {
        Some(path) => dataset::load_json(path)?,
        None => SimulateSpec::default(),
    };
    if let Some(span) = span_deg {
        spec.span_deg = span;
        spec.scene = None;
    }
    if let Some(n) = max_pulses {
        spec.max_pulses = Some(n);
    }
    spec.seed = crate::resolve_seed(seed, spec.seed)?;

    let (scene, scan) = spec.build();
    let data = sim::generate(&scene, &scan)?;
    dataset::save_dataset(dir, &data)?;

    println!(
        "simulated {} pulses over {} captures into {}",
        data.frames.len(),
        data.captures.len(),
        dir.display()
    );
    if let Some(series) = &data.hall_actual {
        println!("hall log: {} samples", series.len());
    }
    Ok(())
}

/// `estimate-beams`: sliding captures → beam lines in {W}.
pub fn estimate_beams(dir: &Path) -> Result<(), CliError> {
    let (scene, captures, _, _) = dataset::load_observations(dir)?;
    let recon = msmcal_core::beam::reconstruct_beams(
        &captures,
        &scene.world_board,
        &scene.sliding_board,
        &scene.k,
    )?;
    let file = BeamsEstimateFile::from_reconstruction(&recon);
    dataset::save_json(&dir.join(files::BEAMS_EST), &file)?;

    println!(
        "reconstructed {} beams from {} captures (PnP mean reprojection {:.3} px)",
        file.beams.len(),
        captures.len(),
        file.pnp_mean_reproj_px
    );
    for beam in &file.beams {
        println!(
            "  beam {}: rms {:.4} mm, sv ratio {:.3}",
            beam.id, beam.rms_mm, beam.sv_ratio
        );
    }
    Ok(())
}

/// `estimate-poses`: joint refinement of planes, beams, and extrinsics.
pub fn estimate_poses(dir: &Path, holdout_beam: Option<usize>) -> Result<(), CliError> {
    let (scene, captures, frames, segments) = dataset::load_observations(dir)?;
    let beams_est_path = dir.join(files::BEAMS_EST);
    if !beams_est_path.exists() {
        return Err(CliError::Validation(format!(
            "{} not found; run estimate-beams first",
            beams_est_path.display()
        )));
    }
    let beams_est: BeamsEstimateFile = dataset::load_json(&beams_est_path)?;
    let mut stage = beams_est.to_stage(&beams_est_path)?;

    let data = MleData {
        k: scene.k,
        world_board: scene.world_board,
        sliding_board: scene.sliding_board,
        captures,
        frames,
    };

    let fit_data = match holdout_beam {
        Some(id) => {
            let ids = data.scan_beam_ids();
            if !ids.contains(&id) {
                return Err(CliError::Validation(format!(
                    "holdout beam {id} not in the scan (beams present: {ids:?})"
                )));
            }
            if ids.len() < 3 {
                return Err(CliError::Validation(format!(
                    "holding out beam {id} leaves fewer than 2 beams"
                )));
            }
            stage.beams.retain(|(bid, _)| *bid != id);
            data.without_beam(id)
        }
        None => data.clone(),
    };

    let init = init_state_with(&fit_data, stage)?;
    let solution = solve_mle(&init, &fit_data, &SolveOptions::default())?;
    let estimates = solution.pose_estimates(&fit_data)?;
    let stats = spanning_angle_stats(&solution.state, &fit_data)?;

    let mut poses = PosesFile::new(&estimates, &stats.per_pulse_deg, stats.mean_deg, &segments);
    if let Some(id) = holdout_beam {
        let predictions = predict_heldout(&solution, &data, id)?;
        poses = poses.with_holdout(id, &predictions);
    }
    dataset::save_json(&dir.join(files::POSES), &poses)?;

    let report = &solution.report;
    println!(
        "estimated {} pulses: {} iterations, cost {:.3e} -> {:.3e}, spanning angle {:.2} deg",
        poses.pulses.len(),
        report.iterations,
        report.initial_cost,
        report.final_cost,
        stats.mean_deg
    );
    if let Some(id) = holdout_beam {
        let n = poses.holdout.len() as f64;
        let mean: f64 = poses.holdout.iter().map(|h| h.delta_px).sum::<f64>() / n.max(1.0);
        let within: usize =
            poses.holdout.iter().filter(|h| h.delta_px < 3.0 * h.sigma_px).count();
        println!(
            "holdout beam {id}: mean |delta| {:.3} px, {}/{} pulses within 3 sigma",
            mean,
            within,
            poses.holdout.len()
        );
    }
    Ok(())
}

/// `estimate-frame`: home frame from the estimated planes, poses rewritten
/// as (alpha, beta, d) about it.
pub fn estimate_frame(dir: &Path) -> Result<(), CliError> {
    let poses_path = dir.join(files::POSES);
    if !poses_path.exists() {
        return Err(CliError::Validation(format!(
            "{} not found; run estimate-poses first",
            poses_path.display()
        )));
    }
    let mut poses: PosesFile = dataset::load_json(&poses_path)?;
    let unpacked = poses.planes(&poses_path)?;
    let planes: Vec<_> = unpacked.iter().map(|(_, p, _)| *p).collect();
    let segments: Vec<_> = unpacked.iter().map(|(_, _, s)| *s).collect();
    let times: Vec<f64> = poses.pulses.iter().map(|p| p.t_s).collect();

    let home = estimate_home_frame(&planes, &segments, &times, &FrameOptions::default())?;
    for (pulse, plane) in poses.pulses.iter_mut().zip(&planes) {
        pulse.pose = Some(PoseRecord::from_pose(&home.mirror_pose(plane)?));
    }
    poses.home_frame = Some(HomeFrameRecord::from_frame(&home));
    dataset::save_json(&poses_path, &poses)?;

    println!(
        "home frame: origin ({:.3}, {:.3}, {:.3}) mm, fast axis ({:.5}, {:.5}, {:.5})",
        home.origin.x, home.origin.y, home.origin.z, home.r0[(0, 0)], home.r0[(1, 0)], home.r0[(2, 0)]
    );
    println!(
        "axis-normal misalignment {:.2e}; pivot piston {:.3} mm at {:.3} Hz; {} poses framed",
        home.axis_normal_dot,
        home.piston_amp_mm,
        home.piston_hz,
        poses.pulses.len()
    );
    Ok(())
}

/// Pose series (t, pose) from a framed poses file.
fn pose_series(poses: &PosesFile, path: &Path) -> Result<Vec<(f64, MirrorPose)>, CliError> {
    if poses.pulses.iter().any(|p| p.pose.is_none()) {
        return Err(CliError::Validation(format!(
            "{}: pose records missing; run estimate-frame first",
            path.display()
        )));
    }
    Ok(poses
        .pulses
        .iter()
        .filter_map(|p| p.pose.as_ref().map(|pose| (p.t_s, pose.to_pose())))
        .collect())
}

/// Pose series restricted to the steady two-axis scan.
///
/// The Hall model describes the steady scan, so pulses from the home and
/// fast-only preamble segments are left out.
fn two_axis_series(poses: &PosesFile, path: &Path) -> Result<Vec<(f64, MirrorPose)>, CliError> {
    pose_series(poses, path).and_then(|series| {
        let filtered: Vec<(f64, MirrorPose)> = series
            .into_iter()
            .zip(&poses.pulses)
            .filter(|(_, p)| p.segment == ScanSegment::TwoAxis)
            .map(|(s, _)| s)
            .collect();
        if filtered.is_empty() {
            return Err(CliError::Validation(format!(
                "{}: no two-axis pulses to calibrate against",
                path.display()
            )));
        }
        Ok(filtered)
    })
}

/// Restricts a Hall series to a time window.
fn clip_series(series: &HallSeries, t0: f64, t1: f64) -> Result<HallSeries, CliError> {
    let keep: Vec<usize> = (0..series.t.len())
        .filter(|&i| series.t[i] >= t0 && series.t[i] <= t1)
        .collect();
    let t = keep.iter().map(|&i| series.t[i]).collect();
    let b = keep.iter().map(|&i| series.b[i]).collect();
    Ok(HallSeries::new(t, b)?)
}

/// `calibrate-hall`: foreground field → pose model plus split evaluation.
pub fn calibrate_hall(
    dir: &Path,
    kind: HallModelKind,
    repeats: usize,
    split: f64,
    seed: u64,
) -> Result<(), CliError> {
    if !(0.0 < split && split < 1.0) {
        return Err(CliError::Validation(format!("--split must be in (0, 1), got {split}")));
    }
    if repeats == 0 {
        return Err(CliError::Validation("--repeats must be positive".into()));
    }
    let poses_path = dir.join(files::POSES);
    if !poses_path.exists() {
        return Err(CliError::Validation(format!(
            "{} not found; run estimate-poses and estimate-frame first",
            poses_path.display()
        )));
    }
    let poses_file: PosesFile = dataset::load_json(&poses_path)?;
    let poses = two_axis_series(&poses_file, &poses_path)?;

    let actual = dataset::load_hall_series(&dir.join(files::HALL_ACTUAL))?;
    let background = dataset::load_hall_series(&dir.join(files::HALL_BACKGROUND))?;
    let search = OffsetSearch::default();

    // Clip the field log to the poses in use (plus the offset search reach),
    // so the fitted tones come from the same steady-scan window.
    let margin = search.half_window_s + 0.01;
    let (t0, t1) = (poses[0].0 - margin, poses[poses.len() - 1].0 + margin);
    let foreground = clip_series(&hall::foreground(&actual, &background)?, t0, t1)?;
    let model = match kind {
        HallModelKind::Linear => hall::fit_linear(&poses, &foreground, &search)?,
        HallModelKind::Sine => hall::fit_sine(&poses, &foreground, None, &search)?,
    };
    let report = hall::evaluate(
        &poses,
        &foreground,
        &EvalOptions { kind, repeats, train_fraction: split, seed, fallback_hz: None, search },
    )?;
    let train_rmse = per_component_train_rmse(&model, &poses, &foreground);

    let file = HallModelFile::from_model(&model, train_rmse, &report);
    dataset::save_json(&dir.join(files::HALL_MODEL), &file)?;

    println!("fitted {:?} model: dt {:.3} ms", model.kind, model.dt_s * 1e3);
    if model.kind == HallModelKind::Sine {
        println!(
            "tones: {:.3} / {:.3} / {:.3} Hz",
            model.f_hz[0], model.f_hz[1], model.f_hz[2]
        );
    }
    println!("| component   | train RMSE | test RMSE (mean +/- sd) |");
    println!("|-------------|-----------:|------------------------:|");
    let labels = ["alpha (deg)", "beta (deg) ", "d (mm)     "];
    for (i, label) in labels.iter().enumerate() {
        println!(
            "| {label} | {:10.5} | {:12.5} +/- {:7.5} |",
            train_rmse[i], report.rmse_mean[i], report.rmse_sd[i]
        );
    }
    Ok(())
}

/// Training RMSE per pose component (alpha deg, beta deg, d mm).
fn per_component_train_rmse(
    model: &hall::HallModel,
    poses: &[(f64, MirrorPose)],
    series: &HallSeries,
) -> [f64; 3] {
    let mut sq = [0.0_f64; 3];
    let mut n = 0usize;
    for (t, pose) in poses {
        let Some(pred) = model.predict(*t, Some(series)) else { continue };
        sq[0] += (pred.alpha_rad - pose.alpha_rad).to_degrees().powi(2);
        sq[1] += (pred.beta_rad - pose.beta_rad).to_degrees().powi(2);
        sq[2] += (pred.d_mm - pose.d_mm).powi(2);
        n += 1;
    }
    if n == 0 {
        return [f64::NAN; 3];
    }
    sq.map(|s| (s / n as f64).sqrt())
}
