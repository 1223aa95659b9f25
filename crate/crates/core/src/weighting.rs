//! Per-feature pixel deviations of the two stereo visual residuals and the
//! weights derived from them.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraRig;
use crate::initializer::{feature_normalized_velocity, triangulate_stereo};
use crate::tracks::StereoObservation;

/// Which residual a deviation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualKind {
    /// Left and right image of the same keyframe.
    Stereo,
    /// Left image at keyframe `k` predicted into keyframe `k + 1`.
    Temporal,
}

/// Expected reprojection discrepancy of one feature, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelDeviation {
    pub sigma: f64,
    pub kind: ResidualKind,
    pub feature_id: u64,
    pub keyframe: u32,
}

/// How residual weights are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeviationMode {
    /// Same deviation for every feature.
    Fixed,
    /// Per-feature deviation from the stereo residual.
    #[default]
    Dynamic,
}

impl std::str::FromStr for DeviationMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(format!("unknown deviation mode '{other}' (expected fixed or dynamic)")),
        }
    }
}

impl std::fmt::Display for DeviationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Dynamic => "dynamic",
        })
    }
}

/// Stereo deviation: the left observation is lifted to 3D with the disparity
/// depth, moved into the right camera and compared with the right
/// observation.
pub fn stereo_deviation(obs: &StereoObservation, rig: &CameraRig, keyframe: u32) -> Result<PixelDeviation> {
    let p_l = triangulate_stereo(obs, rig, 0.0)?.p_c;
    let p_r = p_l - Vector3::new(rig.baseline, 0.0, 0.0);
    let predicted = Vector2::new(p_r.x / p_r.z, p_r.y / p_r.z);
    let measured = rig.normalize(&obs.right);
    Ok(PixelDeviation {
        sigma: rig.f * (predicted - measured).norm(),
        kind: ResidualKind::Stereo,
        feature_id: obs.id,
        keyframe,
    })
}

/// Camera motion over one keyframe interval, expressed in the camera frame
/// at the start of the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraMotion {
    /// Translational velocity of the camera, m/s.
    pub velocity: Vector3<f64>,
    /// Angular rate of the camera, rad/s.
    pub omega: Vector3<f64>,
    /// Interval length, s.
    pub dt: f64,
}

/// Normalized velocity of a static point at `p_c` seen by a camera moving
/// with `motion`.
pub fn apparent_normalized_velocity(p_c: &Vector3<f64>, motion: &CameraMotion) -> Result<Vector2<f64>> {
    let v_c = -motion.velocity - motion.omega.cross(p_c);
    feature_normalized_velocity(p_c, &v_c)
}

/// Temporal deviation: the left observation at keyframe `k` is advanced with
/// the uniform-motion prediction and compared with the observation at `k + 1`.
/// `p_k` and `p_k1` are normalized coordinates, `p_c` the feature in the
/// camera at `k`.
pub fn temporal_deviation(
    feature_id: u64,
    keyframe: u32,
    p_k: &Vector2<f64>,
    p_k1: &Vector2<f64>,
    p_c: &Vector3<f64>,
    motion: &CameraMotion,
    rig: &CameraRig,
) -> Result<PixelDeviation> {
    if !(motion.dt > 0.0) {
        return Err(Error::Time(motion.dt));
    }
    if !(p_c.z > 0.0) {
        return Err(Error::ZeroDepth(p_c.z));
    }
    let v_hat = apparent_normalized_velocity(p_c, motion)?;
    let predicted = p_k + v_hat * motion.dt;
    Ok(PixelDeviation {
        sigma: rig.f * (predicted - p_k1).norm(),
        kind: ResidualKind::Temporal,
        feature_id,
        keyframe,
    })
}

/// Information-style weight `1 / max(σ, floor)²`.
pub fn weight(sigma: f64, floor: f64) -> f64 {
    let s = sigma.max(floor);
    1.0 / (s * s)
}

/// Image displacement over `dt` implied by a normalized velocity, pixels.
pub fn estimated_flow(v_hat: &Vector2<f64>, dt: f64, rig: &CameraRig) -> Vector2<f64> {
    v_hat * (rig.f * dt)
}
