use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::geometry::{Frame, Pose, Rotation};

/// A scalar signal whose second derivative is piecewise linear in time.
///
/// Knots may repeat a time stamp, which encodes a jump in the second
/// derivative. Before the first knot the signal holds its initial value; after
/// the last knot the second derivative keeps its final value.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    x0: f64,
    /// `(t, a, v, x)` at each knot.
    knots: Vec<(f64, f64, f64, f64)>,
}

impl Channel {
    pub fn constant(x0: f64) -> Self {
        Self { x0, knots: Vec::new() }
    }

    /// Builds the channel from `(t, second derivative)` knots sorted by time.
    pub fn from_knots(x0: f64, knots: &[(f64, f64)]) -> Self {
        let mut out: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(knots.len());
        let (mut v, mut x) = (0.0, x0);
        for &(t, a) in knots {
            if let Some(&(t0, a0, _, _)) = out.last() {
                let h: f64 = t - t0;
                if h > 0.0 {
                    let m = (a - a0) / h;
                    x += v * h + a0 * h * h / 2.0 + m * h * h * h / 6.0;
                    v += a0 * h + m * h * h / 2.0;
                }
            }
            out.push((t, a, v, x));
        }
        Self { x0, knots: out }
    }

    /// Value, first and second derivative at `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let Some(first) = self.knots.first() else {
            return (self.x0, 0.0, 0.0);
        };
        if t <= first.0 {
            return (self.x0, 0.0, 0.0);
        }
        // Last knot with time <= t.
        let k = self.knots.partition_point(|kn| kn.0 <= t) - 1;
        let (tk, ak, vk, xk) = self.knots[k];
        let slope = match self.knots.get(k + 1) {
            Some(&(tn, an, _, _)) if tn > tk => (an - ak) / (tn - tk),
            _ => 0.0,
        };
        let h = t - tk;
        (
            xk + vk * h + ak * h * h / 2.0 + slope * h * h * h / 6.0,
            vk + ak * h + slope * h * h / 2.0,
            ak + slope * h,
        )
    }
}

/// Appends knots for an S-curve change of the first derivative by `dv`,
/// starting at `t0`: the second derivative ramps to its peak over `ramp`,
/// holds, and ramps back to zero. All knot times land on multiples of `grid`.
/// Returns the end time.
pub fn push_rate_change(knots: &mut Vec<(f64, f64)>, t0: f64, dv: f64, peak: f64, ramp: f64, grid: f64) -> f64 {
    if dv == 0.0 {
        return t0;
    }
    let ramp = snap(ramp, grid).max(grid);
    let hold = snap((dv.abs() / peak.abs() - ramp).max(0.0), grid);
    let a = dv / (ramp + hold);
    knots.push((t0, 0.0));
    knots.push((t0 + ramp, a));
    knots.push((t0 + ramp + hold, a));
    knots.push((t0 + 2.0 * ramp + hold, 0.0));
    t0 + 2.0 * ramp + hold
}

/// Rounds `x` to a multiple of `grid`.
pub fn snap(x: f64, grid: f64) -> f64 {
    (x / grid).round() * grid
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    Vertical,
    Oblique,
    Hover,
}

impl std::str::FromStr for ProfileKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vertical" => Ok(Self::Vertical),
            "oblique" => Ok(Self::Oblique),
            "hover" => Ok(Self::Hover),
            other => Err(format!(
                "unknown profile '{other}' (expected vertical, oblique or hover)"
            )),
        }
    }
}

impl std::fmt::Display for ProfileKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Vertical => "vertical",
            Self::Oblique => "oblique",
            Self::Hover => "hover",
        })
    }
}

/// Take-off profile parameters. Times are snapped to the IMU sample grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryProfile {
    pub kind: ProfileKind,
    /// Cruise climb rate, m/s.
    pub climb_rate: f64,
    /// Climb height above the start, m.
    pub climb_height: f64,
    /// Pitch held after the oblique tilt manoeuvre, rad.
    pub tilt: f64,
    /// Horizontal drift speed of the oblique profile, m/s.
    pub lateral_speed: f64,
    /// Initial body height above the ground plane, m.
    pub start_height: f64,
    /// At-rest prefix before the climb, s.
    pub stationary_s: f64,
    pub duration_s: f64,
    pub camera_rate_hz: f64,
    pub imu_rate_hz: f64,
    /// Peak vertical acceleration during the climb, m/s².
    pub max_accel: f64,
}

impl Default for TrajectoryProfile {
    fn default() -> Self {
        Self {
            kind: ProfileKind::Vertical,
            climb_rate: 2.0,
            climb_height: 4.0,
            tilt: 0.15,
            lateral_speed: 0.6,
            start_height: 0.15,
            stationary_s: 2.0,
            duration_s: 6.0,
            camera_rate_hz: 20.0,
            imu_rate_hz: 200.0,
            max_accel: 4.0,
        }
    }
}

impl TrajectoryProfile {
    pub fn new(kind: ProfileKind) -> Self {
        let mut p = Self {
            kind,
            ..Self::default()
        };
        if kind == ProfileKind::Hover {
            p.start_height = 3.0;
        }
        p
    }

    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.camera_rate_hz > 0.0
            && self.imu_rate_hz > 0.0
            && self.duration_s > 0.0
            && self.start_height > 0.0
            && self.climb_rate > 0.0
            && self.max_accel > 0.0;
        let ratio = self.imu_rate_hz / self.camera_rate_hz;
        if !ok || (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(crate::Error::Config(format!(
                "invalid trajectory profile (rates {} / {} Hz)",
                self.camera_rate_hz, self.imu_rate_hz
            )));
        }
        Ok(())
    }

    pub fn imu_period(&self) -> f64 {
        1.0 / self.imu_rate_hz
    }
}

/// Kinematic state of the body at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub t: f64,
    /// `R_b^w`.
    pub rotation: Rotation,
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// World-frame acceleration.
    pub acceleration: Vector3<f64>,
    /// Body-frame angular rate.
    pub omega: Vector3<f64>,
}

impl BodyState {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position, Frame::BODY, Frame::WORLD)
    }
}

/// Analytic trajectory: NED position channels and ZYX Euler channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub profile: TrajectoryProfile,
    pos: [Channel; 3],
    /// roll, pitch, yaw
    att: [Channel; 3],
}

/// Builds the analytic trajectory for a profile. The body starts at rest at
/// the world origin with zero yaw; the ground lies `start_height` below.
pub fn generate_trajectory(profile: &TrajectoryProfile) -> Trajectory {
    let grid = profile.imu_period();
    let ramp = 0.25;
    let t_s = snap(profile.stationary_s, grid);
    let mut pos = [Channel::constant(0.0), Channel::constant(0.0), Channel::constant(0.0)];
    let mut att = [Channel::constant(0.0), Channel::constant(0.0), Channel::constant(0.0)];
    match profile.kind {
        ProfileKind::Hover => {}
        ProfileKind::Vertical | ProfileKind::Oblique => {
            let v = profile.climb_rate;
            let mut knots = Vec::new();
            let t_cruise = push_rate_change(&mut knots, t_s, -v, profile.max_accel, ramp, grid);
            let accel_time = t_cruise - t_s;
            let accel_dist = v * accel_time / 2.0;
            let cruise = snap(((profile.climb_height - 2.0 * accel_dist) / v).max(0.0), grid);
            push_rate_change(&mut knots, t_cruise + cruise, v, profile.max_accel, ramp, grid);
            pos[2] = Channel::from_knots(0.0, &knots);

            if profile.kind == ProfileKind::Oblique {
                let mut lat = Vec::new();
                push_rate_change(
                    &mut lat,
                    t_s,
                    profile.lateral_speed,
                    profile.max_accel / 2.0,
                    ramp,
                    grid,
                );
                pos[0] = Channel::from_knots(0.0, &lat);
                let tau = snap(ramp, grid);
                let alpha = profile.tilt / (tau * tau);
                att[1] = Channel::from_knots(
                    0.0,
                    &[
                        (t_s, alpha),
                        (t_s + tau, alpha),
                        (t_s + tau, -alpha),
                        (t_s + 2.0 * tau, -alpha),
                        (t_s + 2.0 * tau, 0.0),
                    ],
                );
            }
        }
    }
    Trajectory {
        profile: *profile,
        pos,
        att,
    }
}

impl Trajectory {
    pub fn state(&self, t: f64) -> BodyState {
        let [x, y, z] = [self.pos[0].eval(t), self.pos[1].eval(t), self.pos[2].eval(t)];
        let [(roll, droll, _), (pitch, dpitch, _), (yaw, dyaw, _)] =
            [self.att[0].eval(t), self.att[1].eval(t), self.att[2].eval(t)];
        let (sr, cr) = roll.sin_cos();
        let (sp, cp) = pitch.sin_cos();
        let omega = Vector3::new(
            droll - dyaw * sp,
            dpitch * cr + dyaw * sr * cp,
            -dpitch * sr + dyaw * cr * cp,
        );
        BodyState {
            t,
            rotation: Rotation::from_euler_ned(roll, pitch, yaw),
            position: Vector3::new(x.0, y.0, z.0),
            velocity: Vector3::new(x.1, y.1, z.1),
            acceleration: Vector3::new(x.2, y.2, z.2),
            omega,
        }
    }

    /// World-frame velocity of a point rigidly attached to the body at
    /// `lever` (body frame).
    pub fn point_velocity(&self, t: f64, lever: &Vector3<f64>) -> Vector3<f64> {
        let s = self.state(t);
        s.velocity + s.rotation.rotate(&s.omega.cross(lever))
    }

    /// Camera pose `T_c^w` at `t`.
    pub fn camera_pose(&self, t: f64, t_cb: &Pose) -> Pose {
        self.state(t)
            .pose()
            .compose(t_cb)
            .expect("body and extrinsic frames chain")
    }

    /// Time at which the body first reaches `height` above its start.
    pub fn time_at_height(&self, height: f64) -> Option<f64> {
        let dt = self.profile.imu_period();
        let n = (self.profile.duration_s / dt).round() as usize;
        (0..=n)
            .map(|k| k as f64 * dt)
            .find(|&t| -self.state(t).position.z >= height)
    }
}
