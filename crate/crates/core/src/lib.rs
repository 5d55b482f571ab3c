//! Calibration library for 3-DoF resonant scanning micro-mirrors.
//!
//! A mirror that tilts about two axes and translates out of plane is observed
//! indirectly: two laser beams reflect off it onto a checkerboard wall, a
//! camera images the reflected dots, and a triaxial Hall sensor samples the
//! actuation field. This crate reconstructs, from those observations alone,
//! the time-resolved mirror plane, a mirror-fixed home frame, and a model
//! mapping Hall readings to mirror pose.
//!
//! # Pipeline
//!
//! 1. **Beam reconstruction** ([`beam`]): a checkerboard slides through the
//!    beams; dots on the board are triangulated across captures and each beam
//!    is fit as a Plücker line in the world frame.
//! 2. **Pose initialization** ([`pose::init_mirror_plane`]): each laser pulse
//!    yields one dot per beam on the wall; the two light-path plane normals
//!    determine the mirror normal, and the real/virtual point midpoint fixes
//!    the remaining translation DoF.
//! 3. **Joint refinement** ([`pose::solve_mle`]): all mirror planes, beam
//!    lines, and extrinsics are refined together by maximum likelihood over
//!    corner and dot reprojections (Levenberg-Marquardt on minimal
//!    parameterizations), with a covariance for every estimate.
//! 4. **Home frame** ([`frame`]): the fast rotation axis and the rotation
//!    center are recovered from the estimated planes; every plane is then
//!    expressed as (alpha, beta, d) about that frame.
//! 5. **Hall calibration** ([`hall`]): linear and sinusoidal models from
//!    field readings to (alpha, beta, d), with a jointly estimated time
//!    offset between the Hall clock and the camera clock.
//! 6. **Simulation** ([`sim`]): a synthetic rig that renders the same
//!    observations from known ground truth, used for validation throughout.
//!
//! # Conventions
//!
//! - Lengths in millimetres, times in seconds, angles in radians internally
//!   (degrees only in files and reports).
//! - Planes are homogeneous: a point X lies on plane (n, d) iff nᵀX + d = 0,
//!   with unit normal n.
//! - A Plücker line stores a unit direction v and moment m = v × p for any
//!   point p on the line, so points on the line satisfy v × X − m = 0.
//! - Rigid transforms are world-to-camera unless named otherwise; frames are
//!   written in the identifiers (`t_c1_w` maps world coordinates into camera 1).
//! - Image coordinates are pixels, u right, v down, origin at the top-left.

pub mod beam;
pub mod camera;
pub mod dataset;
pub mod frame;
pub mod geom;
pub mod hall;
pub mod pose;
pub mod sim;

pub use beam::{reconstruct_beams, BeamEstimate, BeamError, SlidingCapture};
pub use camera::{
    backproject_to_plane, centroid_covariance, project, project_jacobian, solve_pnp, CameraError,
    CheckerboardSpec, ImagePoint, Intrinsics,
};
pub use frame::{estimate_home_frame, FrameError, HomeFrame, MirrorPose};
pub use geom::{GeomError, PlaneH, PluckerLine, RigidTransformMin};
pub use hall::{HallError, HallModel, HallModelKind, HallSeries};
pub use pose::{
    solve_mle, CalibState, HeldoutPrediction, PoseError, PoseEstimate, ScanFrame, SolveOptions,
    SolveReport,
};
pub use sim::{SceneConfig, ScanConfig, SimError, SyntheticDataset};
