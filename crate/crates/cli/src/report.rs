//! `report`: renders a run directory into markdown plus SVG plots.
//!
//! Every section degrades gracefully: stages that have not run yet are noted
//! rather than erroring, so the report is useful at any point of the
//! pipeline. When `ground_truth.json` is present (simulated runs) each stage
//! is scored against it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use msmcal_core::dataset::{
    self, files, BeamsEstimateFile, GroundTruthFile, HallModelFile, PosesFile,
};
use msmcal_core::frame::ScanSegment;
use msmcal_core::hall::{self, HallModelKind, HallSeries};
use msmcal_core::pose::ScanFrame;
use msmcal_core::sim::SceneConfig;

use crate::svg::{self, Panel, PALETTE};
use crate::CliError;

/// Writes `report.md` and `plots/*.svg` into the directory.
pub fn write_report(dir: &Path) -> Result<(), CliError> {
    let (scene, captures, frames, segments) = dataset::load_observations(dir)?;
    let beams_est = load_optional::<BeamsEstimateFile>(&dir.join(files::BEAMS_EST))?;
    let poses = load_optional::<PosesFile>(&dir.join(files::POSES))?;
    let hall_model = load_optional::<HallModelFile>(&dir.join(files::HALL_MODEL))?;
    let truth = dataset::load_ground_truth(dir)?;
    let foreground = load_foreground(dir)?;

    let plots_dir = dir.join("plots");
    fs::create_dir_all(&plots_dir)
        .map_err(|source| CliError::Io { path: plots_dir.clone(), source })?;

    let mut md = String::new();
    let _ = writeln!(md, "# Calibration run report\n");
    let _ = writeln!(
        md,
        "{} sliding captures, {} pulses, beams {:?}.\n",
        captures.len(),
        frames.len(),
        scan_beam_ids(&frames)
    );

    observations_section(&mut md, &captures, &frames, &segments, &foreground);
    beams_section(&mut md, beams_est.as_ref(), truth.as_ref());
    poses_section(&mut md, poses.as_ref(), truth.as_ref());
    frame_section(&mut md, poses.as_ref(), truth.as_ref());
    hall_section(&mut md, hall_model.as_ref(), truth.as_ref());

    let _ = writeln!(md, "## Plots\n");
    let scan_svg = scan_pattern_svg(&scene, &frames);
    write_file(&plots_dir.join("scan_pattern.svg"), &scan_svg)?;
    let _ = writeln!(md, "![Scan pattern](plots/scan_pattern.svg)\n");

    if let Some(poses) = &poses {
        if poses.pulses.iter().any(|p| p.pose.is_some()) {
            let svg = pose_traces_svg(poses, hall_model.as_ref(), foreground.as_ref(), truth.as_ref());
            write_file(&plots_dir.join("pose_traces.svg"), &svg)?;
            let _ = writeln!(md, "![Pose and Hall traces](plots/pose_traces.svg)\n");
        }
    }

    let report_path = dir.join("report.md");
    write_file(&report_path, &md)?;
    println!("wrote {}", report_path.display());
    Ok(())
}

fn load_optional<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    if path.exists() {
        Ok(Some(dataset::load_json(path)?))
    } else {
        Ok(None)
    }
}

fn load_foreground(dir: &Path) -> Result<Option<HallSeries>, CliError> {
    let actual_path = dir.join(files::HALL_ACTUAL);
    let background_path = dir.join(files::HALL_BACKGROUND);
    if !actual_path.exists() || !background_path.exists() {
        return Ok(None);
    }
    let actual = dataset::load_hall_series(&actual_path)?;
    let background = dataset::load_hall_series(&background_path)?;
    Ok(Some(hall::foreground(&actual, &background)?))
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|source| CliError::Io { path: path.into(), source })
}

fn scan_beam_ids(frames: &[ScanFrame]) -> Vec<usize> {
    let mut ids: Vec<usize> =
        frames.iter().flat_map(|f| f.dots.iter().map(|d| d.beam_id)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

// ---------------------------------------------------------------------------
// Markdown sections.

fn observations_section(
    md: &mut String,
    captures: &[msmcal_core::beam::SlidingCapture],
    frames: &[ScanFrame],
    segments: &[ScanSegment],
    foreground: &Option<HallSeries>,
) {
    let _ = writeln!(md, "## Observations\n");
    let capture_dots: usize = captures.iter().map(|c| c.dots.len()).sum();
    let _ = writeln!(
        md,
        "- `{}`: {} captures, {} beam dots",
        files::BEAMS,
        captures.len(),
        capture_dots
    );
    let mut per_segment = [0usize; 3];
    for s in segments {
        per_segment[match s {
            ScanSegment::Home => 0,
            ScanSegment::FastOnly => 1,
            ScanSegment::TwoAxis => 2,
        }] += 1;
    }
    let span = frames
        .iter()
        .flat_map(|f| f.dots.iter().map(|d| d.t_s))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)));
    let _ = writeln!(
        md,
        "- `{}`: {} pulses over {:.1} s (home {}, fast-only {}, two-axis {})",
        files::SCAN,
        frames.len(),
        (span.1 - span.0).max(0.0),
        per_segment[0],
        per_segment[1],
        per_segment[2]
    );
    match foreground {
        Some(series) => {
            let _ = writeln!(
                md,
                "- Hall log: {} foreground samples over {:.1} s",
                series.len(),
                series.t.last().copied().unwrap_or(0.0) - series.t.first().copied().unwrap_or(0.0)
            );
        }
        None => {
            let _ = writeln!(md, "- Hall log: none");
        }
    }
    md.push('\n');
}

fn beams_section(md: &mut String, beams: Option<&BeamsEstimateFile>, truth: Option<&GroundTruthFile>) {
    let _ = writeln!(md, "## Beam reconstruction\n");
    let Some(beams) = beams else {
        let _ = writeln!(md, "_Not run yet (`msmcal estimate-beams`)._\n");
        return;
    };
    let _ = writeln!(md, "PnP mean reprojection: {:.3} px.\n", beams.pnp_mean_reproj_px);
    let has_truth = truth.is_some();
    if has_truth {
        let _ = writeln!(md, "| beam | direction | rms (mm) | sv ratio | vs truth (deg) |");
        let _ = writeln!(md, "|-----:|-----------|---------:|---------:|---------------:|");
    } else {
        let _ = writeln!(md, "| beam | direction | rms (mm) | sv ratio |");
        let _ = writeln!(md, "|-----:|-----------|---------:|---------:|");
    }
    for beam in &beams.beams {
        let dir = format!("({:+.4}, {:+.4}, {:+.4})", beam.v[0], beam.v[1], beam.v[2]);
        if let Some(truth) = truth {
            let delta = truth
                .beams
                .iter()
                .find(|b| b.id == beam.id)
                .map(|b| angle3_deg(beam.v, b.v))
                .map(|a| format!("{a:.2e}"))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} | {:.3} | {} |",
                beam.id, dir, beam.rms_mm, beam.sv_ratio, delta
            );
        } else {
            let _ = writeln!(
                md,
                "| {} | {} | {:.4} | {:.3} |",
                beam.id, dir, beam.rms_mm, beam.sv_ratio
            );
        }
    }
    md.push('\n');
}

fn poses_section(md: &mut String, poses: Option<&PosesFile>, truth: Option<&GroundTruthFile>) {
    let _ = writeln!(md, "## Mirror poses\n");
    let Some(poses) = poses else {
        let _ = writeln!(md, "_Not run yet (`msmcal estimate-poses`)._\n");
        return;
    };
    let _ = writeln!(
        md,
        "{} pulses; mean spanning angle {:.2} deg.",
        poses.pulses.len(),
        poses.spanning_angle_mean_deg
    );
    if let Some(beam) = poses.holdout_beam {
        let n = poses.holdout.len();
        if n > 0 {
            let mean = poses.holdout.iter().map(|h| h.delta_px).sum::<f64>() / n as f64;
            let max = poses.holdout.iter().map(|h| h.delta_px).fold(0.0, f64::max);
            let within = poses.holdout.iter().filter(|h| h.delta_px < 3.0 * h.sigma_px).count();
            let _ = writeln!(
                md,
                "Hold-out beam {beam}: mean |delta| {:.3} px, max {:.3} px, {}/{} within 3 sigma.",
                mean, max, within, n
            );
        }
    }
    if let Some(truth) = truth {
        let mut angle = Stat::default();
        let mut offset = Stat::default();
        for pulse in &poses.pulses {
            if let Some(t) = truth.planes.get(pulse.pulse) {
                angle.push(angle3_deg(pulse.plane.n, t.n));
                offset.push((pulse.plane.d_mm - t.d_mm).abs());
            }
        }
        let _ = writeln!(
            md,
            "Against ground truth: normal error mean {:.2e} / max {:.2e} deg; offset error mean {:.2e} / max {:.2e} mm.",
            angle.mean(),
            angle.max,
            offset.mean(),
            offset.max
        );
    }
    md.push('\n');
}

fn frame_section(md: &mut String, poses: Option<&PosesFile>, truth: Option<&GroundTruthFile>) {
    let _ = writeln!(md, "## Home frame\n");
    let Some(home) = poses.and_then(|p| p.home_frame.as_ref()) else {
        let _ = writeln!(md, "_Not run yet (`msmcal estimate-frame`)._\n");
        return;
    };
    let _ = writeln!(
        md,
        "Origin ({:.3}, {:.3}, {:.3}) mm; fast axis ({:+.5}, {:+.5}, {:+.5}); axis-normal misalignment {:.2e}.",
        home.origin_mm[0],
        home.origin_mm[1],
        home.origin_mm[2],
        home.r0[0][0],
        home.r0[1][0],
        home.r0[2][0],
        home.axis_normal_dot
    );
    if home.origin_ambiguous {
        let _ = writeln!(md, "Origin flagged ambiguous (plane pencil); value is the minimum-norm point.");
    }
    if let Some(truth) = truth {
        let axis = [home.r0[0][0], home.r0[1][0], home.r0[2][0]];
        let axis_truth = [
            truth.home_frame.r0[0][0],
            truth.home_frame.r0[1][0],
            truth.home_frame.r0[2][0],
        ];
        let d = [
            home.origin_mm[0] - truth.home_frame.origin_mm[0],
            home.origin_mm[1] - truth.home_frame.origin_mm[1],
            home.origin_mm[2] - truth.home_frame.origin_mm[2],
        ];
        let _ = writeln!(
            md,
            "Against ground truth: fast-axis error {:.2e} deg, origin error {:.3} mm.",
            angle3_deg(axis, axis_truth),
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        );
    }
    if let Some(poses) = poses {
        let framed: Vec<_> = poses.pulses.iter().filter_map(|p| p.pose.as_ref()).collect();
        if !framed.is_empty() {
            let mut alpha = Stat::default();
            let mut beta = Stat::default();
            let mut d = Stat::default();
            for pose in &framed {
                alpha.push_signed(pose.alpha_deg);
                beta.push_signed(pose.beta_deg);
                d.push_signed(pose.d_mm);
            }
            let _ = writeln!(
                md,
                "Pose ranges: alpha [{:+.3}, {:+.3}] deg, beta [{:+.3}, {:+.3}] deg, d [{:+.4}, {:+.4}] mm.",
                alpha.min, alpha.max, beta.min, beta.max, d.min, d.max
            );
        }
    }
    md.push('\n');
}

fn hall_section(md: &mut String, model: Option<&HallModelFile>, truth: Option<&GroundTruthFile>) {
    let _ = writeln!(md, "## Hall model\n");
    let Some(model) = model else {
        let _ = writeln!(md, "_Not run yet (`msmcal calibrate-hall`)._\n");
        return;
    };
    let kind = match model.kind {
        HallModelKind::Linear => "linear (field features)",
        HallModelKind::Sine => "sine (drive-tone features)",
    };
    let dt_truth = truth.and_then(|t| t.hall_dt_s);
    match dt_truth {
        Some(injected) => {
            let _ = writeln!(
                md,
                "{kind}; clock offset {:.3} ms (injected {:.3} ms, error {:.3} ms).",
                model.dt_s * 1e3,
                injected * 1e3,
                (model.dt_s - injected).abs() * 1e3
            );
        }
        None => {
            let _ = writeln!(md, "{kind}; clock offset {:.3} ms.", model.dt_s * 1e3);
        }
    }
    if model.kind == HallModelKind::Sine {
        let _ = writeln!(
            md,
            "Tones: {:.3} / {:.3} / {:.3} Hz.",
            model.f_hz[0], model.f_hz[1], model.f_hz[2]
        );
    }
    let _ = writeln!(md, "\n| component | train RMSE | test RMSE (mean +/- sd over {} splits) |", model.eval.repeats);
    let _ = writeln!(md, "|-----------|-----------:|--------------------------------------:|");
    let rows = [
        ("alpha (deg)", model.train_rmse.alpha_deg, model.eval.rmse_mean.alpha_deg, model.eval.rmse_sd.alpha_deg),
        ("beta (deg)", model.train_rmse.beta_deg, model.eval.rmse_mean.beta_deg, model.eval.rmse_sd.beta_deg),
        ("d (mm)", model.train_rmse.d_mm, model.eval.rmse_mean.d_mm, model.eval.rmse_sd.d_mm),
    ];
    for (label, train, mean, sd) in rows {
        let _ = writeln!(md, "| {label} | {train:.5} | {mean:.5} +/- {sd:.5} |");
    }
    md.push('\n');
}

// ---------------------------------------------------------------------------
// Plots.

fn scan_pattern_svg(scene: &SceneConfig, frames: &[ScanFrame]) -> String {
    let (w, h) = scene.image_size;
    let mut panel = Panel::with_size(
        520.0,
        430.0,
        "Scan pattern (camera 2)",
        "u (px)",
        "v (px)",
        (0.0, w as f64),
        (h as f64, 0.0),
    );
    let corners: Vec<(f64, f64)> = frames
        .first()
        .map(|f| f.corners.iter().map(|c| (c.point.u, c.point.v)).collect())
        .unwrap_or_default();
    panel.scatter(&corners, 1.0, "#cccccc");
    for (i, id) in scan_beam_ids(frames).iter().enumerate() {
        let dots: Vec<(f64, f64)> = frames
            .iter()
            .flat_map(|f| f.dots.iter())
            .filter(|d| d.beam_id == *id)
            .map(|d| (d.point.u, d.point.v))
            .collect();
        let color = PALETTE[i % PALETTE.len()];
        panel.scatter(&dots, 1.8, color);
        panel.legend(color, &format!("beam {id}"));
    }
    svg::document(&[panel])
}

fn pose_traces_svg(
    poses: &PosesFile,
    model: Option<&HallModelFile>,
    foreground: Option<&HallSeries>,
    truth: Option<&GroundTruthFile>,
) -> String {
    let framed: Vec<(f64, [f64; 3])> = poses
        .pulses
        .iter()
        .filter_map(|p| p.pose.as_ref().map(|pose| (p.t_s, [pose.alpha_deg, pose.beta_deg, pose.d_mm])))
        .collect();
    let t_lo = framed.iter().map(|(t, _)| *t).fold(f64::INFINITY, f64::min);
    let t_hi = framed.iter().map(|(t, _)| *t).fold(f64::NEG_INFINITY, f64::max);

    // Hall prediction: dense in time; linear features need the field series.
    let hall_model = model.map(|m| m.to_model());
    let mut hall_traces: Vec<Vec<(f64, [f64; 3])>> = Vec::new();
    if let Some(m) = &hall_model {
        let series = match m.kind {
            HallModelKind::Linear => foreground,
            HallModelKind::Sine => None,
        };
        if m.kind == HallModelKind::Sine || series.is_some() {
            let mut trace = Vec::with_capacity(601);
            for i in 0..=600 {
                let t = t_lo + (t_hi - t_lo) * i as f64 / 600.0;
                if let Some(pose) = m.predict(t, series) {
                    trace.push((
                        t,
                        [pose.alpha_rad.to_degrees(), pose.beta_rad.to_degrees(), pose.d_mm],
                    ));
                }
            }
            hall_traces.push(trace);
        }
    }

    let truth_series: Vec<(f64, [f64; 3])> = truth
        .map(|t| {
            t.pulse_times_s
                .iter()
                .zip(&t.poses)
                .map(|(time, p)| (*time, [p.alpha_deg, p.beta_deg, p.d_mm]))
                .collect()
        })
        .unwrap_or_default();

    let labels = ["alpha (deg)", "beta (deg)", "d (mm)"];
    let mut panels = Vec::new();
    for (axis, label) in labels.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (_, v) in framed.iter().chain(truth_series.iter()) {
            lo = lo.min(v[axis]);
            hi = hi.max(v[axis]);
        }
        let pad = 0.08 * (hi - lo).max(1e-6);
        let title = if axis == 0 { "Pose traces" } else { "" };
        let mut panel = Panel::new(title, "t (s)", label, (t_lo, t_hi), (lo - pad, hi + pad));
        if !truth_series.is_empty() {
            let pts: Vec<(f64, f64)> = truth_series.iter().map(|(t, v)| (*t, v[axis])).collect();
            panel.scatter(&pts, 1.2, "#2ca02c");
        }
        for trace in &hall_traces {
            let pts: Vec<(f64, f64)> = trace.iter().map(|(t, v)| (*t, v[axis])).collect();
            panel.polyline(&pts, "#ff7f0e");
        }
        let pts: Vec<(f64, f64)> = framed.iter().map(|(t, v)| (*t, v[axis])).collect();
        panel.scatter(&pts, 2.0, "#1f77b4");
        if axis == 0 {
            panel.legend("#1f77b4", "estimated");
            if !hall_traces.is_empty() {
                panel.legend("#ff7f0e", "hall model");
            }
            if !truth_series.is_empty() {
                panel.legend("#2ca02c", "truth");
            }
        }
        panels.push(panel);
    }
    svg::document(&panels)
}

// ---------------------------------------------------------------------------
// Small numeric helpers over plain arrays (file records).

/// Angle between two 3-vectors (degrees), robust near zero.
fn angle3_deg(a: [f64; 3], b: [f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return f64::NAN;
    }
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    // |cross| is unchanged under sign flips of either vector, so this is the
    // acute angle between the spanned lines.
    let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt() / (na * nb);
    sin.min(1.0).asin().to_degrees()
}

/// Running mean/min/max accumulator.
struct Stat {
    sum: f64,
    n: usize,
    min: f64,
    max: f64,
}

impl Default for Stat {
    fn default() -> Self {
        Self { sum: 0.0, n: 0, min: f64::INFINITY, max: f64::NEG_INFINITY }
    }
}

impl Stat {
    fn push(&mut self, v: f64) {
        self.push_signed(v);
    }

    fn push_signed(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}
