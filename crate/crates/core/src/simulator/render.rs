use nalgebra::{Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::Landmark;
use super::{splitmix64, GroundTruth};
use crate::geometry::{CameraRig, Pose};
use crate::tracks::{FrameObservations, StereoObservation};

/// Pixel noise added independently to every image coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PixelNoise {
    /// Same standard deviation for every feature, px.
    Isotropic { sigma: f64 },
    /// Each feature draws its own standard deviation uniformly in `[min, max]` px.
    PerFeature { min: f64, max: f64 },
}

impl Default for PixelNoise {
    fn default() -> Self {
        Self::Isotropic { sigma: 0.5 }
    }
}

impl PixelNoise {
    pub fn none() -> Self {
        Self::Isotropic { sigma: 0.0 }
    }

    /// Standard deviation used for feature `id`.
    pub fn sigma_for(&self, id: u64, seed: u64) -> f64 {
        match *self {
            Self::Isotropic { sigma } => sigma,
            Self::PerFeature { min, max } => {
                let u = (splitmix64(seed ^ splitmix64(id)) >> 11) as f64 / (1u64 << 53) as f64;
                min + (max - min) * u
            }
        }
    }
}

/// Projects every landmark visible in both images of the camera at
/// `t_cw = T_c^w`, without noise.
pub fn project_visible(landmarks: &[Landmark], t_cw: &Pose, rig: &CameraRig) -> Vec<StereoObservation> {
    let t_wc = t_cw.inverse();
    landmarks
        .iter()
        .filter_map(|l| {
            let p = t_wc.transform_point(&l.position);
            let left = rig.project(&p).ok()?;
            let right = rig.project_right(&p).ok()?;
            (rig.in_bounds(&left) && rig.in_bounds(&right)).then(|| StereoObservation::new(l.id, left, right))
        })
        .collect()
}

/// Renders stereo tracks at every camera frame of the ground truth.
///
/// Track ids are landmark ids, so a feature keeps its id for as long as it
/// stays in view.
pub fn render_tracks(
    landmarks: &[Landmark],
    truth: &GroundTruth,
    rig: &CameraRig,
    noise: &PixelNoise,
    seed: u64,
) -> Vec<FrameObservations> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma_seed = splitmix64(seed ^ 0x5157_4d41);
    truth
        .frames
        .iter()
        .map(|f| {
            let mut features = project_visible(landmarks, &f.camera, rig);
            for o in &mut features {
                let s = noise.sigma_for(o.id, sigma_seed);
                if s > 0.0 {
                    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
                    o.left += Vector2::new(draw(), draw()) * s;
                    o.right += Vector2::new(draw(), draw()) * s;
                }
            }
            FrameObservations {
                frame: f.frame,
                t: f.t,
                features,
            }
        })
        .collect()
}

/// Left-camera coordinates of a world point.
pub fn to_camera(t_cw: &Pose, p_w: &Vector3<f64>) -> Vector3<f64> {
    t_cw.inverse().transform_point(p_w)
}
