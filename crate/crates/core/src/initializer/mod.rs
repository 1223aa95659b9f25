//! Take-off initialization: homography solution selection with an
//! IMU-propagated prior normal, metric scale from stereo PnP, and body
//! velocity from the homography motion field.

mod motion;
mod pipeline;
mod pnp;
mod velocity;
mod window;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Stage};
use crate::geometry::{Frame, Pose, PoseRecord};
use crate::homography::{HomographySolution, RansacConfig};
use crate::imu::{ned_gravity, StationarityConfig};
use crate::weighting::DeviationMode;

pub use motion::{
    camera_velocity, feature_normalized_velocity, metric_alignment, predicted_normalized_velocity, projection_jacobian,
    recover_scale, recover_scale_stacked, select_solution, triangulate_stereo, Selection, Triangulation,
};
pub use pipeline::{run_initialization, run_initialization_timed, StageTimings};
pub use pnp::{solve_pnp, PnpConfig, PnpOutcome, PnpPoint};
pub use velocity::{refine_body_velocity, FlowFeature, GaussNewtonConfig, VelocityEstimate, VelocityProblem};
pub use window::{gather_window, Keyframe, KeyframeWindow};

/// Version of the result JSON layout.
pub const RESULT_SCHEMA_VERSION: u32 = 1;

/// Pipeline parameters (`--config` file). Missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Climb height that starts visual initialization, m. Must be below 3 m.
    pub preset_height_m: f64,
    /// Keyframes per window.
    pub window_size: usize,
    /// Minimum stereo features per keyframe; fewer falls back to the IMU.
    pub min_features: usize,
    /// Disparities below this are not used to place PnP points, px.
    pub min_disparity_px: f64,
    pub gn_max_iters: usize,
    /// Homography inlier threshold, normalized units.
    pub ransac_threshold: f64,
    pub ransac_confidence: f64,
    pub ransac_max_iters: usize,
    /// PnP inlier threshold, px.
    pub pnp_threshold_px: f64,
    pub pnp_max_iters: usize,
    pub deviation: DeviationMode,
    pub attitude: AttitudeSource,
    pub fixed_deviation_px: f64,
    pub deviation_floor_px: f64,
    /// Homography translations `‖t/d‖` below this count as no parallax.
    pub min_parallax: f64,
    pub gravity: [f64; 3],
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
    pub stationarity: StationarityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preset_height_m: 1.5,
            window_size: 10,
            min_features: 20,
            min_disparity_px: 1.0,
            gn_max_iters: 25,
            ransac_threshold: 1e-2,
            ransac_confidence: 0.999,
            ransac_max_iters: 2000,
            pnp_threshold_px: 12.0,
            pnp_max_iters: 500,
            deviation: DeviationMode::Dynamic,
            attitude: AttitudeSource::Imu,
            fixed_deviation_px: 1.5,
            deviation_floor_px: 0.25,
            min_parallax: 0.01,
            gravity: ned_gravity().into(),
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
            stationarity: StationarityConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.preset_height_m > 0.0 && self.preset_height_m < 3.0) {
            return bad("preset_height_m must be in (0, 3)");
        }
        if self.window_size < 2 {
            return bad("window_size must be at least 2");
        }
        if self.min_features < 4 {
            return bad("min_features must be at least 4");
        }
        if !(self.fixed_deviation_px > 0.0 && self.deviation_floor_px > 0.0) {
            return bad("deviations must be positive");
        }
        if !(self.ransac_threshold > 0.0 && self.pnp_threshold_px > 0.0) {
            return bad("thresholds must be positive");
        }
        if !(self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0) {
            return bad("ransac_confidence must be in (0, 1)");
        }
        Ok(())
    }

    pub fn ransac(&self) -> RansacConfig {
        RansacConfig {
            threshold: self.ransac_threshold,
            confidence: self.ransac_confidence,
            max_iters: self.ransac_max_iters,
        }
    }

    pub fn gauss_newton(&self) -> GaussNewtonConfig {
        GaussNewtonConfig {
            max_iters: self.gn_max_iters,
            ..GaussNewtonConfig::default()
        }
    }

    pub fn pnp(&self, focal_px: f64) -> PnpConfig {
        PnpConfig {
            threshold: self.pnp_threshold_px / focal_px,
            confidence: self.ransac_confidence,
            max_iters: self.pnp_max_iters,
            ..PnpConfig::default()
        }
    }
}

/// Where keyframe attitudes come from. Translations always come from the
/// scaled homography chain.
///
/// In a near-vertical climb the translation is almost parallel to the plane
/// normal, the two decompositions nearly coincide and the decomposed rotation
/// becomes very sensitive to noise, so the IMU attitude is the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttitudeSource {
    #[default]
    Imu,
    Homography,
    Pnp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitStatus {
    Initialized,
    /// Too few features; the trajectory comes from the IMU alone.
    ImuOnlyFallback,
    /// No translation is observable; nothing was initialized.
    PureRotation,
    Failed,
}

impl std::fmt::Display for InitStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Initialized => "initialized",
            Self::ImuOnlyFallback => "imu-only-fallback",
            Self::PureRotation => "pure-rotation",
            Self::Failed => "failed",
        })
    }
}

/// Body state at one keyframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyframeState {
    pub frame: u32,
    pub t: f64,
    /// `T_b^w`.
    pub pose: PoseRecord,
    /// `v_b^w`, m/s.
    pub velocity: [f64; 3],
}

impl KeyframeState {
    pub fn new(frame: u32, t: f64, pose: &Pose, velocity: &Vector3<f64>) -> Self {
        Self {
            frame,
            t,
            pose: PoseRecord::from_pose(pose),
            velocity: (*velocity).into(),
        }
    }

    pub fn pose(&self) -> Pose {
        self.pose.pose(Frame::body(self.frame), Frame::WORLD)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::from(self.velocity)
    }
}

/// Per-pair record of the homography and scale stages. Pairs join the first
/// keyframe of the window with each later keyframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub frame_i: u32,
    pub frame_j: u32,
    pub correspondences: usize,
    pub homography_inliers: usize,
    /// Candidates left after the depth test.
    pub candidates: Vec<HomographySolution>,
    pub selected: usize,
    pub margin: f64,
    pub pnp_points: usize,
    pub pnp_inliers: usize,
    /// Camera `j` position in camera `i` over the plane distance.
    pub t_bar: [f64; 3],
    /// Metric camera `j` position in camera `i` from PnP.
    pub t_hat: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityDiagnostics {
    pub frame: u32,
    pub features: usize,
    pub iterations: usize,
    pub cost: f64,
    pub converged: bool,
}

/// 50th, 95th and 100th percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p100: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            p50: percentile_sorted(&v, 50.0),
            p95: percentile_sorted(&v, 95.0),
            p100: v[v.len() - 1],
        })
    }
}

/// Nearest-rank percentile of an ascending sample.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Start of IMU propagation, s.
    pub t0: f64,
    pub gate_frame: Option<u32>,
    pub gate_time: Option<f64>,
    /// Prior normal in the first window camera.
    pub prior_normal: Option<[f64; 3]>,
    /// Fewest stereo features in any window keyframe.
    pub min_features_seen: usize,
    /// Largest `‖t/d‖` seen when checking for parallax.
    pub max_parallax: Option<f64>,
    pub deviation: DeviationMode,
    pub pairs: Vec<PairDiagnostics>,
    pub velocity: Vec<VelocityDiagnostics>,
    /// Planarity indicator over consecutive keyframe pairs.
    pub indicator: Option<Percentiles>,
    pub stereo_deviation_px: Option<Percentiles>,
    pub temporal_deviation_px: Option<Percentiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureInfo {
    pub stage: Option<Stage>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitializationResult {
    pub schema_version: u32,
    pub status: InitStatus,
    /// One entry per window keyframe. IMU-only states unless initialized.
    pub keyframes: Vec<KeyframeState>,
    /// Distance from the first window camera to the plane, m.
    pub scale: Option<f64>,
    /// Solution chosen for the widest pair of the window.
    pub selected: Option<HomographySolution>,
    pub diagnostics: Diagnostics,
    pub failure: Option<FailureInfo>,
}

impl InitializationResult {
    /// Report for a run that stopped with an error.
    pub fn failed(err: &Error) -> Self {
        Self {
            schema_version: RESULT_SCHEMA_VERSION,
            status: InitStatus::Failed,
            keyframes: Vec::new(),
            scale: None,
            selected: None,
            diagnostics: Diagnostics::default(),
            failure: Some(FailureInfo {
                stage: err.stage(),
                message: err.to_string(),
            }),
        }
    }

    pub fn is_initialized(&self) -> bool {
        self.status == InitStatus::Initialized
    }
}
