//! End-to-end checks: simulator output through every estimation stage.

use msmcal_core::frame::{estimate_home_frame, FrameOptions, ScanSegment};
use msmcal_core::hall::{self, OffsetSearch};
use msmcal_core::pose::{init_state, predict_heldout, solve_mle, spanning_angle_stats, SolveOptions};
use msmcal_core::sim::{self, HallSimConfig, ScanConfig, SceneConfig};

fn noise_free(mut scan: ScanConfig) -> ScanConfig {
    scan.noise.corner_sigma_px = 0.0;
    scan.noise.dot_sigma_px = 0.0;
    scan
}

fn plane_angle_deg(a: &msmcal_core::geom::PlaneH, b: &msmcal_core::geom::PlaneH) -> f64 {
    // The cross product resolves angles near zero that a dot product rounds
    // away (acos of 1 - eps is already ~1e-6 degrees).
    a.n.cross(&b.n).norm().min(1.0).asin().to_degrees()
}

#[test]
fn presets_render_cleanly() {
    for span in [18.0, 27.0, 46.0] {
        let scene = SceneConfig::preset(span);
        let scan = noise_free(ScanConfig::preset_two_axis(8.0, 1.0));
        let data = sim::generate(&scene, &scan)
            .unwrap_or_else(|e| panic!("span {span}: {e}"));
        assert_eq!(data.captures.len(), scene.sliding_x.len());
        assert!(data.frames.len() >= 15, "span {span}: {} pulses", data.frames.len());
        for frame in &data.frames {
            assert_eq!(frame.dots.len(), scene.beams.len());
        }
        for capture in &data.captures {
            assert_eq!(capture.dots.len(), scene.beams.len());
        }
    }
}

#[test]
fn initialization_matches_truth_on_noise_free_data() {
    let scene = SceneConfig::preset(27.0).with_beams(&[0, 1]);
    let scan = noise_free(ScanConfig::preset_two_axis(8.0, 1.0));
    let data = sim::generate(&scene, &scan).unwrap();
    let mle = data.mle_data();
    let state = init_state(&mle).unwrap();

    assert_eq!(state.planes.len(), data.truth.planes.len());
    for (j, plane_min) in state.planes.iter().enumerate() {
        let est = plane_min.to_plane().unwrap();
        let truth = &data.truth.planes[j];
        let angle = plane_angle_deg(&est, truth);
        assert!(angle < 1e-6, "pulse {j}: init normal off by {angle:.2e}°");
        assert!(
            (est.d - truth.d).abs() < 1e-4,
            "pulse {j}: init offset off by {:.2e} mm",
            (est.d - truth.d).abs()
        );
    }
    for (b, id) in state.beam_ids.iter().enumerate() {
        let truth = &data.truth.beams.iter().find(|(tid, _)| tid == id).unwrap().1;
        let line = state.beams[b].to_line();
        assert!(line.v.dot(&truth.v) > 1.0 - 1e-10, "beam {id} direction");
        assert!((line.m - truth.m).norm() < 1e-4, "beam {id} moment");
    }
}

#[test]
fn mle_reaches_machine_precision_on_noise_free_data() {
    let scene = SceneConfig::preset(27.0).with_beams(&[0, 1]);
    let scan = noise_free(ScanConfig::preset_two_axis(8.0, 1.0));
    let data = sim::generate(&scene, &scan).unwrap();
    let mle = data.mle_data();
    let state = init_state(&mle).unwrap();
    let solution = solve_mle(&state, &mle, &SolveOptions::default()).unwrap();

    assert!(solution.report.converged, "report: {:?}", solution.report);
    let estimates = solution.pose_estimates(&mle).unwrap();
    let mut worst_angle: f64 = 0.0;
    let mut worst_d: f64 = 0.0;
    for (est, truth) in estimates.iter().zip(&data.truth.planes) {
        worst_angle = worst_angle.max(plane_angle_deg(&est.plane, truth));
        worst_d = worst_d.max((est.plane.d - truth.d).abs());
    }
    assert!(worst_angle < 1e-6, "worst normal error {worst_angle:.2e}°");
    assert!(worst_d < 1e-6, "worst offset error {worst_d:.2e} mm");
}

#[test]
fn spanning_angle_tracks_the_preset() {
    for (span, lo, hi) in [(18.0, 16.0, 20.0), (27.0, 25.0, 29.0), (46.0, 44.0, 48.0)] {
        let scene = SceneConfig::preset(span).with_beams(&[0, 1]);
        let scan = noise_free(ScanConfig::preset_two_axis(6.0, 0.0));
        let data = sim::generate(&scene, &scan).unwrap();
        let mle = data.mle_data();
        let state = init_state(&mle).unwrap();
        let stats = spanning_angle_stats(&state, &mle).unwrap();
        assert!(
            stats.mean_deg > lo && stats.mean_deg < hi,
            "span {span}: mean spanning angle {:.1}°",
            stats.mean_deg
        );
    }
}

#[test]
fn holdout_prediction_is_exact_on_noise_free_data() {
    let scene = SceneConfig::preset(27.0);
    let scan = noise_free(ScanConfig::preset_two_axis(8.0, 1.0));
    let data = sim::generate(&scene, &scan).unwrap();
    let full = data.mle_data();
    let fit_data = full.without_beam(2);
    let state = init_state(&fit_data).unwrap();
    let solution = solve_mle(&state, &fit_data, &SolveOptions::default()).unwrap();
    let predictions = predict_heldout(&solution, &full, 2).unwrap();
    assert_eq!(predictions.len(), data.frames.len());
    for p in &predictions {
        assert!(p.delta_px < 1e-6, "pulse {}: delta {:.2e} px", p.pulse, p.delta_px);
        assert!(p.sigma_px.is_finite() && p.sigma_px >= 0.0);
    }
}

#[test]
fn home_frame_recovered_through_the_pipeline() {
    let scene = SceneConfig::preset(27.0).with_beams(&[0, 1]);
    let scan = noise_free(ScanConfig::preset_scan());
    let data = sim::generate(&scene, &scan).unwrap();
    assert!(data.segments.iter().any(|s| *s == ScanSegment::Home));
    assert!(data.segments.iter().any(|s| *s == ScanSegment::FastOnly));

    let mle = data.mle_data();
    let state = init_state(&mle).unwrap();
    let solution = solve_mle(&state, &mle, &SolveOptions::default()).unwrap();
    let estimates = solution.pose_estimates(&mle).unwrap();
    let planes: Vec<_> = estimates.iter().map(|e| e.plane).collect();
    let home =
        estimate_home_frame(&planes, &data.segments, &data.truth.pulse_times, &FrameOptions::default())
            .unwrap();

    let truth = &data.truth.home;
    let axis_err = home.r0.column(0).dot(&truth.r0.column(0)).abs().clamp(0.0, 1.0).acos();
    assert!(axis_err.to_degrees() < 0.01, "fast axis error {:.4}°", axis_err.to_degrees());
    let origin_err = (home.origin - truth.origin).norm();
    assert!(origin_err < 0.05, "origin error {origin_err:.4} mm");

    for (pose_truth, plane) in data.truth.poses.iter().zip(&planes) {
        let pose = home.mirror_pose(plane).unwrap();
        assert!((pose.alpha_rad - pose_truth.alpha_rad).abs().to_degrees() < 1e-4);
        assert!((pose.beta_rad - pose_truth.beta_rad).abs().to_degrees() < 1e-4);
        assert!((pose.d_mm - pose_truth.d_mm).abs() < 1e-3);
    }
}

#[test]
fn hall_offset_recovered_from_synthetic_log() {
    let scene = SceneConfig::preset(27.0).with_beams(&[0, 1]);
    let mut scan = noise_free(ScanConfig::preset_two_axis(20.0, 1.0));
    scan.hall = Some(HallSimConfig::preset(3.7e-3));
    let data = sim::generate(&scene, &scan).unwrap();

    let actual = data.hall_actual.as_ref().unwrap();
    let background = data.hall_background.as_ref().unwrap();
    let foreground = hall::foreground(actual, background).unwrap();

    let poses = data.truth_pose_series();
    let model = hall::fit_sine(&poses, &foreground, None, &OffsetSearch::default()).unwrap();
    assert!(
        (model.dt_s - 3.7e-3).abs() < 0.5e-3,
        "recovered dt {:.4} ms",
        model.dt_s * 1e3
    );
    assert!(model.train_rmse < 0.05, "train rmse {:.4}", model.train_rmse);
}
