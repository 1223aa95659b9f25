use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::render::{render_tracks, PixelNoise};
use super::scene::{generate_scene, Polygon, SceneConfig, ScenePreset};
use super::trajectory::{generate_trajectory, ProfileKind, TrajectoryProfile};
use super::{derive_seed, synthesize_imu, GroundTruth, ImuNoise};
use crate::error::Result;
use crate::geometry::{Frame, Pose, RigConfig, Rotation};
use crate::imu::{load_imu, ned_gravity, write_imu_csv, ImuSample};
use crate::tracks::{read_features_csv, write_features_csv, FrameObservations};

/// Everything needed to generate one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub profile: TrajectoryProfile,
    pub pixel_noise: PixelNoise,
    pub imu_noise: ImuNoise,
    pub rig: RigConfig,
    pub gravity: [f64; 3],
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::new(ScenePreset::Helipad, ProfileKind::Vertical, 0)
    }
}

impl DatasetConfig {
    pub fn new(preset: ScenePreset, kind: ProfileKind, seed: u64) -> Self {
        Self {
            scene: SceneConfig::preset(preset),
            profile: TrajectoryProfile::new(kind),
            pixel_noise: PixelNoise::default(),
            imu_noise: ImuNoise::default(),
            rig: RigConfig::default(),
            gravity: ned_gravity().into(),
            seed,
        }
    }

    /// No pixel or IMU noise and no biases.
    pub fn noise_free(mut self) -> Self {
        self.pixel_noise = PixelNoise::none();
        self.imu_noise = ImuNoise::none();
        self
    }
}

/// Body ground truth at one camera timestamp (`groundtruth.csv` row).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl TruthRecord {
    pub fn new(t: f64, pose: &Pose, velocity: &Vector3<f64>) -> Self {
        let [qw, qx, qy, qz] = pose.rotation.wxyz();
        Self {
            t,
            px: pose.translation.x,
            py: pose.translation.y,
            pz: pose.translation.z,
            qw,
            qx,
            qy,
            qz,
            vx: velocity.x,
            vy: velocity.y,
            vz: velocity.z,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.px, self.py, self.pz)
    }

    pub fn rotation(&self) -> Rotation {
        Rotation::from_wxyz([self.qw, self.qx, self.qy, self.qz])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation(), self.position(), Frame::BODY, Frame::WORLD)
    }
}

/// True ground plane in one camera frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneRecord {
    pub frame: u32,
    pub t: f64,
    pub normal: [f64; 3],
    pub d: f64,
}

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneInfo {
    pub preset: ScenePreset,
    pub profile: ProfileKind,
    pub roughness: f64,
    pub ground_z: f64,
    pub feature_count: usize,
    pub dropout: Vec<Polygon>,
    pub pixel_noise: PixelNoise,
    pub imu_noise: ImuNoise,
    pub gravity: [f64; 3],
    pub seed: u64,
    pub planes: Vec<PlaneRecord>,
}

/// A generated or loaded dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rig: RigConfig,
    pub imu: Vec<ImuSample>,
    pub frames: Vec<FrameObservations>,
    pub truth: Vec<TruthRecord>,
    pub scene: SceneInfo,
}

impl Dataset {
    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.scene.gravity)
    }
}

/// Generates a dataset; the ground plane is placed `profile.start_height`
/// below the resting body. Sub-seeds for scene, tracks and IMU derive from
/// `cfg.seed`.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<(Dataset, GroundTruth)> {
    cfg.profile.validate()?;
    let mut rig_cfg = cfg.rig.clone();
    rig_cfg.camera_rate_hz = cfg.profile.camera_rate_hz;
    rig_cfg.imu_rate_hz = cfg.profile.imu_rate_hz;
    let rig = rig_cfg.rig()?;
    let scene_cfg = SceneConfig {
        ground_z: cfg.profile.start_height,
        seed: derive_seed(cfg.seed, 0),
        ..cfg.scene.clone()
    };
    let landmarks = generate_scene(&scene_cfg)?;
    let trajectory = generate_trajectory(&cfg.profile);
    let truth = GroundTruth::new(trajectory, &rig.t_cb, scene_cfg.ground_z);
    let frames = render_tracks(&landmarks, &truth, &rig, &cfg.pixel_noise, derive_seed(cfg.seed, 1));
    let gravity = Vector3::from(cfg.gravity);
    let imu = synthesize_imu(&truth.trajectory, &cfg.imu_noise, &gravity, derive_seed(cfg.seed, 2));
    let records = truth
        .frames
        .iter()
        .map(|f| TruthRecord::new(f.t, &f.body.pose(), &f.body.velocity))
        .collect();
    let scene = SceneInfo {
        preset: scene_cfg.preset,
        profile: cfg.profile.kind,
        roughness: scene_cfg.roughness,
        ground_z: scene_cfg.ground_z,
        feature_count: landmarks.len(),
        dropout: scene_cfg.dropout.clone(),
        pixel_noise: cfg.pixel_noise,
        imu_noise: cfg.imu_noise,
        gravity: cfg.gravity,
        seed: cfg.seed,
        planes: truth
            .frames
            .iter()
            .map(|f| PlaneRecord {
                frame: f.frame,
                t: f.t,
                normal: f.normal.into(),
                d: f.distance,
            })
            .collect(),
    };
    Ok((
        Dataset {
            rig: rig_cfg,
            imu,
            frames,
            truth: records,
            scene,
        },
        truth,
    ))
}

pub const RIG_FILE: &str = "rig.json";
pub const IMU_FILE: &str = "imu.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const TRUTH_FILE: &str = "groundtruth.csv";
pub const SCENE_FILE: &str = "scene.json";

/// File names of a dataset directory, in a fixed order.
pub const DATASET_FILES: [&str; 5] = [RIG_FILE, IMU_FILE, FEATURES_FILE, TRUTH_FILE, SCENE_FILE];

pub fn write_truth_csv<W: Write>(writer: W, truth: &[TruthRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for r in truth {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_truth_csv<R: Read>(reader: R) -> Result<Vec<TruthRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let rows: std::result::Result<Vec<TruthRecord>, csv::Error> = rdr.deserialize().collect();
    Ok(rows?)
}

/// Writes the dataset layout into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, ds: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_json(&dir.join(RIG_FILE), &ds.rig)?;
    write_json(&dir.join(SCENE_FILE), &ds.scene)?;
    write_imu_csv(BufWriter::new(File::create(dir.join(IMU_FILE))?), &ds.imu)?;
    write_features_csv(BufWriter::new(File::create(dir.join(FEATURES_FILE))?), &ds.frames)?;
    write_truth_csv(BufWriter::new(File::create(dir.join(TRUTH_FILE))?), &ds.truth)?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Frames without any feature leave no rows in `features.csv`; restores them
/// from the one-row-per-frame ground truth.
fn with_empty_frames(observed: Vec<FrameObservations>, truth: &[TruthRecord]) -> Vec<FrameObservations> {
    let mut by_frame: std::collections::BTreeMap<u32, FrameObservations> =
        observed.into_iter().map(|f| (f.frame, f)).collect();
    for (i, r) in truth.iter().enumerate() {
        by_frame.entry(i as u32).or_insert_with(|| FrameObservations {
            frame: i as u32,
            t: r.t,
            features: Vec::new(),
        });
    }
    by_frame.into_values().collect()
}

/// Loads a dataset directory. `groundtruth.csv` and `scene.json` are
/// required.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let rig: RigConfig = serde_json::from_reader(BufReader::new(File::open(dir.join(RIG_FILE))?))?;
    let scene: SceneInfo = serde_json::from_reader(BufReader::new(File::open(dir.join(SCENE_FILE))?))?;
    let imu = load_imu(&dir.join(IMU_FILE))?;
    let observed = read_features_csv(BufReader::new(File::open(dir.join(FEATURES_FILE))?))?;
    let truth = read_truth_csv(BufReader::new(File::open(dir.join(TRUTH_FILE))?))?;
    let frames = with_empty_frames(observed, &truth);
    Ok(Dataset {
        rig,
        imu,
        frames,
        truth,
        scene,
    })
}
