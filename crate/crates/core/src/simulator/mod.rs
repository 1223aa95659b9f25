//! Deterministic take-off simulator: planar scenes, analytic trajectories,
//! stereo tracks and IMU streams with known ground truth.
//!
//! The world frame is NED with its origin at the body's resting position and
//! zero initial yaw. The ground plane sits at `z = ground_z` below it.

mod dataset;
mod render;
mod scene;
mod trajectory;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::{Pose, Rotation};
use crate::imu::ImuSample;

pub use dataset::{
    generate_dataset, load_dataset, read_truth_csv, write_dataset, write_json, write_truth_csv, Dataset, DatasetConfig,
    PlaneRecord, SceneInfo, TruthRecord, DATASET_FILES, TRUTH_FILE,
};
pub use render::{project_visible, render_tracks, to_camera, PixelNoise};
pub use scene::{generate_scene, Landmark, Polygon, SceneConfig, ScenePreset};
pub use trajectory::{generate_trajectory, BodyState, Channel, ProfileKind, Trajectory, TrajectoryProfile};

/// SplitMix64 step; used to derive independent stream seeds from one master seed.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of `master`.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream.wrapping_add(1)))
}

/// Ground truth of one camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthFrame {
    pub frame: u32,
    pub t: f64,
    pub body: BodyState,
    /// `T_c^w` of the left camera.
    pub camera: Pose,
    /// Ground-plane normal in the left-camera frame, pointing at the plane.
    pub normal: Vector3<f64>,
    /// Camera-to-plane distance, m.
    pub distance: f64,
}

/// Trajectory plus per-frame camera ground truth.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub t_cb: Pose,
    pub ground_z: f64,
    pub frames: Vec<TruthFrame>,
}

impl GroundTruth {
    pub fn new(trajectory: Trajectory, t_cb: &Pose, ground_z: f64) -> Self {
        let p = trajectory.profile;
        let n = (p.duration_s * p.camera_rate_hz).round() as u32;
        let frames = (0..=n)
            .map(|k| {
                let t = k as f64 / p.camera_rate_hz;
                let body = trajectory.state(t);
                let camera = trajectory.camera_pose(t, t_cb);
                let normal = camera.rotation.inverse().rotate(&Vector3::z());
                TruthFrame {
                    frame: k,
                    t,
                    body,
                    camera,
                    normal,
                    distance: ground_z - camera.translation.z,
                }
            })
            .collect();
        Self {
            trajectory,
            t_cb: *t_cb,
            ground_z,
            frames,
        }
    }

    pub fn state(&self, t: f64) -> BodyState {
        self.trajectory.state(t)
    }

    /// Frame nearest to `t`.
    pub fn frame_at(&self, t: f64) -> Option<&TruthFrame> {
        self.frames
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }
}

/// Sensor noise densities and constant biases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImuNoise {
    /// rad/s/√Hz
    pub gyro_density: f64,
    /// m/s²/√Hz
    pub accel_density: f64,
    pub gyro_bias: [f64; 3],
    pub accel_bias: [f64; 3],
}

impl Default for ImuNoise {
    fn default() -> Self {
        Self {
            gyro_density: 0.005,
            accel_density: 0.05,
            gyro_bias: [0.0005, -0.0003, 0.0002],
            accel_bias: [0.01, -0.008, 0.012],
        }
    }
}

impl ImuNoise {
    pub fn none() -> Self {
        Self {
            gyro_density: 0.0,
            accel_density: 0.0,
            gyro_bias: [0.0; 3],
            accel_bias: [0.0; 3],
        }
    }

    /// Gyro noise only, at the default density.
    pub fn gyro_only() -> Self {
        Self {
            gyro_density: Self::default().gyro_density,
            ..Self::none()
        }
    }
}

/// IMU stream at the profile's IMU rate: body angular rate and specific force
/// `R_bᵀ(a_w − g)` plus biases and white noise.
pub fn synthesize_imu(trajectory: &Trajectory, noise: &ImuNoise, gravity: &Vector3<f64>, seed: u64) -> Vec<ImuSample> {
    let p = trajectory.profile;
    let rate = p.imu_rate_hz;
    let n = (p.duration_s * rate).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sg = noise.gyro_density * rate.sqrt();
    let sa = noise.accel_density * rate.sqrt();
    let bg = Vector3::from(noise.gyro_bias);
    let ba = Vector3::from(noise.accel_bias);
    let mut white = |s: f64| -> Vector3<f64> {
        if s == 0.0 {
            return Vector3::zeros();
        }
        Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng)) * s
    };
    (0..=n)
        .map(|k| {
            let t = k as f64 / rate;
            let s = trajectory.state(t);
            let specific = s.rotation.inverse().rotate(&(s.acceleration - gravity));
            ImuSample::new(t, s.omega + bg + white(sg), specific + ba + white(sa))
        })
        .collect()
}

/// Rotation of the left camera relative to the world for a body attitude.
pub fn camera_rotation(body: &Rotation, t_cb: &Pose) -> Rotation {
    body.compose(&t_cb.rotation)
}
