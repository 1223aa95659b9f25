//! Frames, rotations, rigid poses and the stereo pinhole rig.
//!
//! Naming follows `T_A^B`: the pose of frame `A` expressed in frame `B`, so that
//! `p_B = R_A^B p_A + t_A^B`. Every [`Pose`] carries both frame labels and
//! [`Pose::compose`] refuses to chain poses whose labels do not line up.

use std::fmt;

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|sin(pitch)|` past which Euler extraction is treated as gimbal locked.
const GIMBAL_LOCK_EPS: f64 = 1e-12;

/// A 3D rotation stored as a unit quaternion.
///
/// The quaternion is renormalized after every composition, which keeps long
/// gyro-integration chains on the manifold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", from = "[f64; 4]")]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Self(UnitQuaternion::identity())
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>) -> Self {
        Self(UnitQuaternion::new_normalize(q.into_inner()))
    }

    /// Builds a rotation from `[w, x, y, z]`; the input is normalized.
    pub fn from_wxyz(q: [f64; 4]) -> Self {
        Self(UnitQuaternion::new_normalize(Quaternion::new(q[0], q[1], q[2], q[3])))
    }

    /// Projects an arbitrary 3×3 matrix onto SO(3) and converts it.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::from_quaternion(UnitQuaternion::from_matrix(&nearest_rotation(m)))
    }

    /// Exponential map of a rotation vector (axis times angle, radians).
    pub fn exp(rotation_vector: &Vector3<f64>) -> Self {
        Self(UnitQuaternion::from_scaled_axis(*rotation_vector))
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        let n = axis.norm();
        if n == 0.0 {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::exp(&(Vector3::x() * angle))
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::exp(&(Vector3::y() * angle))
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::exp(&(Vector3::z() * angle))
    }

    /// ZYX rotation `Rz(yaw)·Ry(pitch)·Rx(roll)`, mapping body to NED world.
    pub fn from_euler_ned(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self::rot_z(yaw)
            .compose(&Self::rot_y(pitch))
            .compose(&Self::rot_x(roll))
    }

    pub fn quaternion(&self) -> &UnitQuaternion<f64> {
        &self.0
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    /// Logarithm map: rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vector3<f64> {
        self.0.scaled_axis()
    }

    pub fn angle(&self) -> f64 {
        self.0.angle()
    }

    /// Geodesic distance to another rotation, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        self.inverse().compose(other).angle()
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.inverse())
    }

    /// `self · other`, renormalized.
    pub fn compose(&self, other: &Rotation) -> Self {
        Self(UnitQuaternion::new_normalize(
            self.0.into_inner() * other.0.into_inner(),
        ))
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transform_vector(v)
    }

    pub fn to_euler_ned(&self) -> EulerNed {
        to_euler_ned(self)
    }
}

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl From<Rotation> for [f64; 4] {
    fn from(r: Rotation) -> Self {
        r.wxyz()
    }
}

impl From<[f64; 4]> for Rotation {
    fn from(q: [f64; 4]) -> Self {
        Rotation::from_wxyz(q)
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        self.compose(&rhs)
    }
}

impl std::ops::Mul<Vector3<f64>> for Rotation {
    type Output = Vector3<f64>;

    fn mul(self, rhs: Vector3<f64>) -> Vector3<f64> {
        self.rotate(&rhs)
    }
}

/// Closest rotation matrix in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// NED Euler angles in radians (ZYX order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerNed {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    /// Set when `|pitch| = π/2`; yaw is then reported as zero.
    pub gimbal_locked: bool,
}

impl EulerNed {
    pub fn as_array(&self) -> [f64; 3] {
        [self.roll, self.pitch, self.yaw]
    }
}

/// Extracts ZYX (yaw-pitch-roll) angles of a body-to-NED rotation.
pub fn to_euler_ned(r: &Rotation) -> EulerNed {
    let m = r.matrix();
    let s = (-m[(2, 0)]).clamp(-1.0, 1.0);
    if s.abs() >= 1.0 - GIMBAL_LOCK_EPS {
        let pitch = std::f64::consts::FRAC_PI_2.copysign(s);
        let roll = (-m[(1, 2)]).atan2(m[(1, 1)]);
        return EulerNed {
            roll,
            pitch,
            yaw: 0.0,
            gimbal_locked: true,
        };
    }
    EulerNed {
        roll: m[(2, 1)].atan2(m[(2, 2)]),
        pitch: s.asin(),
        yaw: m[(1, 0)].atan2(m[(0, 0)]),
        gimbal_locked: false,
    }
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut x = a.rem_euclid(two_pi);
    if x > std::f64::consts::PI {
        x -= two_pi;
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Camera,
    Body,
    World,
}

/// A frame label. `index` names a keyframe; `None` means "any instant", as for
/// the rigid camera-to-body extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub kind: FrameKind,
    pub index: Option<u32>,
}

impl Frame {
    pub const WORLD: Frame = Frame {
        kind: FrameKind::World,
        index: None,
    };
    pub const CAMERA: Frame = Frame {
        kind: FrameKind::Camera,
        index: None,
    };
    pub const BODY: Frame = Frame {
        kind: FrameKind::Body,
        index: None,
    };

    pub fn camera(k: u32) -> Self {
        Frame {
            kind: FrameKind::Camera,
            index: Some(k),
        }
    }

    pub fn body(k: u32) -> Self {
        Frame {
            kind: FrameKind::Body,
            index: Some(k),
        }
    }

    /// Whether `self` and `other` can be identified when chaining poses.
    pub fn chains_with(&self, other: &Frame) -> bool {
        self.kind == other.kind
            && match (self.index, other.index) {
                (Some(a), Some(b)) => a == b,
                _ => true,
            }
    }

    fn with_index_from(self, other: &Frame) -> Frame {
        Frame {
            index: self.index.or(other.index),
            ..self
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self.kind {
            FrameKind::Camera => "c",
            FrameKind::Body => "b",
            FrameKind::World => "w",
        };
        match self.index {
            Some(k) => write!(f, "{c}{k}"),
            None => f.write_str(c),
        }
    }
}

/// Rigid transform `T_of^in`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
    /// Frame whose pose this is (`A` in `T_A^B`).
    pub of: Frame,
    /// Frame it is expressed in (`B` in `T_A^B`).
    pub in_frame: Frame,
}

impl Pose {
    pub fn new(rotation: Rotation, translation: Vector3<f64>, of: Frame, in_frame: Frame) -> Self {
        Self {
            rotation,
            translation,
            of,
            in_frame,
        }
    }

    pub fn identity(of: Frame, in_frame: Frame) -> Self {
        Self::new(Rotation::identity(), Vector3::zeros(), of, in_frame)
    }

    /// `T_C^B = self ∘ other` where `self = T_A^B` and `other = T_C^A`.
    pub fn compose(&self, other: &Pose) -> Result<Pose> {
        if !self.of.chains_with(&other.in_frame) {
            return Err(Error::LabeledFrame {
                expected: self.of,
                found: other.in_frame,
            });
        }
        let shared = self.of.with_index_from(&other.in_frame);
        Ok(Pose {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
            of: other.of.with_index_from(&shared),
            in_frame: self.in_frame,
        })
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.inverse();
        Pose {
            rotation: r_inv,
            translation: -r_inv.rotate(&self.translation),
            of: self.in_frame,
            in_frame: self.of,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Returns a copy with new frame labels.
    pub fn relabel(mut self, of: Frame, in_frame: Frame) -> Pose {
        self.of = of;
        self.in_frame = in_frame;
        self
    }
}

/// Compose two poses, checking labels.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose> {
    a.compose(b)
}

/// Calibrated, rectified stereo pair with a left-camera-to-body extrinsic.
///
/// The right camera sits at `+baseline` along the left camera's x axis, so a
/// point `p` in the left frame is at `p - [baseline, 0, 0]` in the right frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    pub width: u32,
    pub height: u32,
    /// `T_c^b`, left camera to body.
    pub t_cb: Pose,
}

impl CameraRig {
    pub fn new(f: f64, cx: f64, cy: f64, baseline: f64, width: u32, height: u32, t_cb: Pose) -> Result<Self> {
        if !(f > 0.0 && f.is_finite()) {
            return Err(Error::InvalidRig(format!("focal length must be positive, got {f}")));
        }
        if !(baseline > 0.0 && baseline.is_finite()) {
            return Err(Error::InvalidRig(format!("baseline must be positive, got {baseline}")));
        }
        if !(0.0..=width as f64).contains(&cx) || !(0.0..=height as f64).contains(&cy) {
            return Err(Error::InvalidRig(format!(
                "principal point ({cx}, {cy}) outside {width}x{height} image"
            )));
        }
        let t_cb = t_cb.relabel(Frame::CAMERA, Frame::BODY);
        Ok(Self {
            f,
            cx,
            cy,
            baseline,
            width,
            height,
            t_cb,
        })
    }

    /// The reference rig: 1280×800 images, f = 400 px, 10 cm baseline, camera
    /// looking down with its x axis along body right.
    pub fn reference() -> Self {
        let t_cb = Pose::new(
            Rotation::rot_z(std::f64::consts::FRAC_PI_2),
            Vector3::new(0.05, 0.0, 0.05),
            Frame::CAMERA,
            Frame::BODY,
        );
        Self::new(400.0, 640.0, 400.0, 0.1, 1280, 800, t_cb).expect("reference rig is valid")
    }

    /// Pinhole projection of a left-camera point to pixels.
    pub fn project(&self, p_c: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p_c.z <= 0.0 {
            return Err(Error::BehindCamera(p_c.z));
        }
        Ok(Vector2::new(
            self.f * p_c.x / p_c.z + self.cx,
            self.f * p_c.y / p_c.z + self.cy,
        ))
    }

    /// Projection into the right camera of a point given in the left frame.
    pub fn project_right(&self, p_c: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.project(&(p_c - Vector3::new(self.baseline, 0.0, 0.0)))
    }

    /// Pixel to normalized image coordinate.
    pub fn normalize(&self, pixel: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((pixel.x - self.cx) / self.f, (pixel.y - self.cy) / self.f)
    }

    /// Pixel to homogeneous normalized coordinate `[x, y, 1]`.
    pub fn normalize_h(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        self.normalize(pixel).push(1.0)
    }

    pub fn denormalize(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(p.x * self.f + self.cx, p.y * self.f + self.cy)
    }

    pub fn in_bounds(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0 && pixel.y >= 0.0 && pixel.x < self.width as f64 && pixel.y < self.height as f64
    }
}

/// Camera rig file contents (`rig.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    pub f: f64,
    pub cx: f64,
    pub cy: f64,
    pub baseline: f64,
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    #[serde(rename = "T_cb")]
    pub t_cb: PoseRecord,
    #[serde(default = "default_camera_rate")]
    pub camera_rate_hz: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate_hz: f64,
}

fn default_width() -> u32 {
    1280
}
fn default_height() -> u32 {
    800
}
fn default_camera_rate() -> f64 {
    20.0
}
fn default_imu_rate() -> f64 {
    200.0
}

impl RigConfig {
    pub fn rig(&self) -> Result<CameraRig> {
        CameraRig::new(
            self.f,
            self.cx,
            self.cy,
            self.baseline,
            self.width,
            self.height,
            self.t_cb.pose(Frame::CAMERA, Frame::BODY),
        )
    }

    pub fn from_rig(rig: &CameraRig, camera_rate_hz: f64, imu_rate_hz: f64) -> Self {
        Self {
            f: rig.f,
            cx: rig.cx,
            cy: rig.cy,
            baseline: rig.baseline,
            width: rig.width,
            height: rig.height,
            t_cb: PoseRecord::from_pose(&rig.t_cb),
            camera_rate_hz,
            imu_rate_hz,
        }
    }
}

impl Default for RigConfig {
    fn default() -> Self {
        Self::from_rig(&CameraRig::reference(), default_camera_rate(), default_imu_rate())
    }
}

/// Serialized pose: quaternion `[w, x, y, z]` plus translation `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub q_wxyz: [f64; 4],
    pub t_xyz: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &Pose) -> Self {
        Self {
            q_wxyz: p.rotation.wxyz(),
            t_xyz: p.translation.into(),
        }
    }

    pub fn pose(&self, of: Frame, in_frame: Frame) -> Pose {
        Pose::new(
            Rotation::from_wxyz(self.q_wxyz),
            Vector3::from(self.t_xyz),
            of,
            in_frame,
        )
    }
}

/// Skew-symmetric cross-product matrix.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Divides by the third component.
pub fn dehomogenize(v: &Vector3<f64>) -> Vector2<f64> {
    Vector2::new(v.x / v.z, v.y / v.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn pose(r: Rotation, t: [f64; 3]) -> Pose {
        Pose::new(r, Vector3::from(t), Frame::BODY, Frame::WORLD)
    }

    #[test]
    fn compose_with_identity() {
        let t = pose(Rotation::from_euler_ned(0.1, -0.2, 0.3), [1.0, 2.0, 3.0]);
        let id = Pose::identity(Frame::BODY, Frame::BODY);
        let c = t.compose(&id).unwrap();
        assert_relative_eq!(c.translation, t.translation, epsilon = 1e-15);
        assert!(c.rotation.angle_to(&t.rotation) < 1e-15);
        assert_eq!(c.of, Frame::BODY);
        assert_eq!(c.in_frame, Frame::WORLD);
    }

    #[test]
    fn compose_matches_matrix_product() {
        // T_A^W with A = B frame label reuse: compose needs chaining labels.
        let a = Pose::new(Rotation::rot_z(FRAC_PI_2), Vector3::x(), Frame::BODY, Frame::WORLD);
        let b = Pose::new(Rotation::rot_z(FRAC_PI_2), Vector3::x(), Frame::CAMERA, Frame::BODY);
        let c = a.compose(&b).unwrap();
        let m = a.matrix() * b.matrix();
        assert_relative_eq!(c.matrix(), m, epsilon = 1e-15);
        assert!(c.rotation.angle_to(&Rotation::rot_z(PI)) < 1e-12);
        assert_relative_eq!(c.translation, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-15);
        assert_eq!((c.of, c.in_frame), (Frame::CAMERA, Frame::WORLD));
    }

    #[test]
    fn compose_rejects_unchained_labels() {
        let a = Pose::identity(Frame::BODY, Frame::WORLD);
        let b = Pose::identity(Frame::BODY, Frame::CAMERA);
        assert!(matches!(a.compose(&b), Err(Error::LabeledFrame { .. })));
        let a = Pose::identity(Frame::body(1), Frame::WORLD);
        let b = Pose::identity(Frame::camera(2), Frame::body(2));
        assert!(a.compose(&b).is_err());
    }

    #[test]
    fn generic_extrinsic_inherits_keyframe_index() {
        let t_bw = Pose::identity(Frame::body(3), Frame::WORLD);
        let t_cb = Pose::identity(Frame::CAMERA, Frame::BODY);
        let t_cw = t_bw.compose(&t_cb).unwrap();
        assert_eq!(t_cw.of, Frame::camera(3));
    }

    #[test]
    fn project_examples() {
        let rig = CameraRig::new(
            400.0,
            640.0,
            400.0,
            0.1,
            1280,
            800,
            Pose::identity(Frame::CAMERA, Frame::BODY),
        )
        .unwrap();
        let px = rig.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(640.0, 400.0));
        assert_eq!(rig.normalize(&Vector2::new(640.0, 400.0)), Vector2::zeros());
        assert_eq!(rig.normalize(&Vector2::new(840.0, 400.0)), Vector2::new(0.5, 0.0));

        let rig0 = CameraRig {
            cx: 0.0,
            cy: 0.0,
            ..rig.clone()
        };
        let px = rig0.project(&Vector3::new(1.0, 2.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(200.0, 400.0));
        assert!(matches!(
            rig.project(&Vector3::new(0.0, 0.0, 0.0)),
            Err(Error::BehindCamera(_))
        ));
        assert!(matches!(
            rig.project(&Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn rig_validation() {
        let id = Pose::identity(Frame::CAMERA, Frame::BODY);
        assert!(CameraRig::new(0.0, 1.0, 1.0, 0.1, 10, 10, id).is_err());
        assert!(CameraRig::new(1.0, 1.0, 1.0, -0.1, 10, 10, id).is_err());
        assert!(CameraRig::new(1.0, 11.0, 1.0, 0.1, 10, 10, id).is_err());
    }

    #[test]
    fn euler_examples() {
        let e = Rotation::identity().to_euler_ned();
        assert_eq!(e.as_array(), [0.0, 0.0, 0.0]);
        let e = Rotation::rot_z(0.3).to_euler_ned();
        assert_relative_eq!(e.yaw, 0.3, epsilon = 1e-15);
        assert_relative_eq!(e.roll, 0.0, epsilon = 1e-15);
        assert_relative_eq!(e.pitch, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn euler_gimbal_lock_is_flagged() {
        let e = Rotation::from_euler_ned(0.2, FRAC_PI_2, 0.0).to_euler_ned();
        assert!(e.gimbal_locked);
        assert_eq!(e.yaw, 0.0);
        assert_relative_eq!(e.roll, 0.2, epsilon = 1e-7);
    }

    #[test]
    fn euler_round_trip_against_axis_product() {
        // Independent oracle: explicit axis matrices.
        let (roll, pitch, yaw) = (0.4_f64, -0.7_f64, 2.5_f64);
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, roll.cos(), -roll.sin(), 0.0, roll.sin(), roll.cos());
        let ry = Matrix3::new(
            pitch.cos(),
            0.0,
            pitch.sin(),
            0.0,
            1.0,
            0.0,
            -pitch.sin(),
            0.0,
            pitch.cos(),
        );
        let rz = Matrix3::new(yaw.cos(), -yaw.sin(), 0.0, yaw.sin(), yaw.cos(), 0.0, 0.0, 0.0, 1.0);
        let r = Rotation::from_matrix(&(rz * ry * rx));
        let e = r.to_euler_ned();
        assert_relative_eq!(e.roll, roll, epsilon = 1e-10);
        assert_relative_eq!(e.pitch, pitch, epsilon = 1e-10);
        assert_relative_eq!(e.yaw, yaw, epsilon = 1e-10);
    }

    #[test]
    fn rotation_stays_unit_under_long_composition() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut r = Rotation::identity();
        for _ in 0..100_000 {
            let w = Vector3::new(
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.1..0.1),
            );
            r = r.compose(&Rotation::exp(&w));
        }
        assert!((r.quaternion().norm() - 1.0).abs() < 1e-9);
        let m = r.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-9);
        assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rig_config_json_round_trip() {
        let cfg = RigConfig::default();
        let s = serde_json::to_string(&cfg).unwrap();
        assert!(s.contains("\"T_cb\""));
        let back: RigConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.rig().unwrap().width, 1280);
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation> {
        (-PI..PI, -1.5..1.5, -PI..PI).prop_map(|(r, p, y)| Rotation::from_euler_ned(r, p, y))
    }

    proptest! {
        #[test]
        fn pose_inverse_composes_to_identity(r in arb_rotation(), t in proptest::array::uniform3(-100.0..100.0f64)) {
            let p = pose(r, t);
            let id = p.compose(&p.inverse()).unwrap();
            prop_assert!(id.rotation.angle() < 1e-12);
            prop_assert!(id.translation.norm() < 1e-12);
            prop_assert!((r.quaternion().norm() - 1.0).abs() < 1e-12);
            let m = r.matrix();
            prop_assert!((m.transpose() * m - Matrix3::identity()).norm() < 1e-12);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn normalize_inverts_project(x in -5.0..5.0f64, y in -5.0..5.0f64, z in 0.01..50.0f64) {
            let rig = CameraRig::reference();
            let p = Vector3::new(x, y, z);
            let n = rig.normalize(&rig.project(&p).unwrap());
            prop_assert!((n - Vector2::new(x / z, y / z)).norm() < 1e-12);
        }

        #[test]
        fn euler_round_trip(roll in -3.0..3.0f64, pitch in -1.5..1.5f64, yaw in -3.0..3.0f64) {
            let e = Rotation::from_euler_ned(roll, pitch, yaw).to_euler_ned();
            prop_assert!(!e.gimbal_locked);
            prop_assert!(wrap_angle(e.roll - roll).abs() < 1e-10);
            prop_assert!((e.pitch - pitch).abs() < 1e-10);
            prop_assert!(wrap_angle(e.yaw - yaw).abs() < 1e-10);
        }
    }
}
