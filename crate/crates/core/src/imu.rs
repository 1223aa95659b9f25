//! Strapdown IMU propagation for the pre-initialization phase, gyro-only
//! camera rotation, and the propagated ground-plane normal.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Frame, Pose, Rotation};

/// Standard gravity in an NED world (down is positive).
pub const STANDARD_GRAVITY: f64 = 9.81;

pub fn ned_gravity() -> Vector3<f64> {
    Vector3::new(0.0, 0.0, STANDARD_GRAVITY)
}

/// One gyro + accelerometer measurement in the body frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vector3<f64>,
    /// Specific force, m/s².
    pub accel: Vector3<f64>,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vector3<f64>, accel: Vector3<f64>) -> Self {
        Self { t, gyro, accel }
    }

    fn lerp(a: &ImuSample, b: &ImuSample, t: f64) -> ImuSample {
        let w = if b.t > a.t { (t - a.t) / (b.t - a.t) } else { 0.0 };
        ImuSample {
            t,
            gyro: a.gyro.lerp(&b.gyro, w),
            accel: a.accel.lerp(&b.accel, w),
        }
    }
}

/// Navigation state: body pose `T_b^w`, velocity `v_b^w`, constant biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NavState {
    pub t: f64,
    pub pose: Pose,
    pub velocity: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    pub accel_bias: Vector3<f64>,
}

impl NavState {
    pub fn new(t: f64, rotation: Rotation, position: Vector3<f64>, velocity: Vector3<f64>) -> Self {
        Self {
            t,
            pose: Pose::new(rotation, position, Frame::BODY, Frame::WORLD),
            velocity,
            gyro_bias: Vector3::zeros(),
            accel_bias: Vector3::zeros(),
        }
    }

    pub fn with_biases(mut self, gyro_bias: Vector3<f64>, accel_bias: Vector3<f64>) -> Self {
        self.gyro_bias = gyro_bias;
        self.accel_bias = accel_bias;
        self
    }

    pub fn rotation(&self) -> Rotation {
        self.pose.rotation
    }

    pub fn position(&self) -> Vector3<f64> {
        self.pose.translation
    }
}

/// Plane normal expressed in the left-camera frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorNormal {
    pub n: Vector3<f64>,
    pub t: f64,
}

impl PriorNormal {
    /// Camera parallel to the ground: the normal is the optical axis.
    pub fn level(t: f64) -> Self {
        Self { n: Vector3::z(), t }
    }
}

fn check_monotonic(samples: &[ImuSample]) -> Result<()> {
    for w in samples.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::Stream(format!(
                "timestamps not strictly increasing at t = {}",
                w[1].t
            )));
        }
    }
    Ok(())
}

/// Propagates `state` through `samples` with midpoint integration.
///
/// Rotation uses the average bias-corrected rate over each interval. The
/// world acceleration is evaluated at both ends of the interval and treated as
/// linear in between, which makes velocity and position exact whenever the
/// true acceleration is piecewise linear on the sample grid.
pub fn propagate(state: &NavState, samples: &[ImuSample], gravity: &Vector3<f64>) -> Result<NavState> {
    check_monotonic(samples)?;
    let Some(first) = samples.first() else {
        return Ok(*state);
    };
    if (first.t - state.t).abs() > 1e-9 {
        return Err(Error::Stream(format!(
            "samples start at {} but the state is at {}",
            first.t, state.t
        )));
    }
    let mut r = state.pose.rotation;
    let mut p = state.pose.translation;
    let mut v = state.velocity;
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let dt = b.t - a.t;
        let omega = (a.gyro + b.gyro) * 0.5 - state.gyro_bias;
        let r_next = r.compose(&Rotation::exp(&(omega * dt)));
        let acc_a = r.rotate(&(a.accel - state.accel_bias)) + gravity;
        let acc_b = r_next.rotate(&(b.accel - state.accel_bias)) + gravity;
        p += v * dt + (acc_a * 2.0 + acc_b) * (dt * dt / 6.0);
        v += (acc_a + acc_b) * (0.5 * dt);
        r = r_next;
    }
    let mut out = *state;
    out.t = samples[samples.len() - 1].t;
    out.pose.rotation = r;
    out.pose.translation = p;
    out.velocity = v;
    Ok(out)
}

/// Samples covering `[t_a, t_b]`, with the end points linearly interpolated
/// when they fall between measurements.
pub fn samples_between(samples: &[ImuSample], t_a: f64, t_b: f64) -> Result<Vec<ImuSample>> {
    const EPS: f64 = 1e-9;
    if !(t_b >= t_a) {
        return Err(Error::Time(t_b - t_a));
    }
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Err(Error::Stream("empty sample stream".into()));
    };
    if t_a < first.t - EPS || t_b > last.t + EPS {
        return Err(Error::Stream(format!(
            "span [{t_a}, {t_b}] outside stream [{}, {}]",
            first.t, last.t
        )));
    }
    let at = |t: f64| -> ImuSample {
        let k = samples.partition_point(|s| s.t < t - EPS);
        if k < samples.len() && (samples[k].t - t).abs() <= EPS {
            return ImuSample { t, ..samples[k] };
        }
        let k = k.clamp(1, samples.len() - 1);
        ImuSample::lerp(&samples[k - 1], &samples[k], t)
    };
    let mut out = vec![at(t_a)];
    out.extend(samples.iter().filter(|s| s.t > t_a + EPS && s.t < t_b - EPS).copied());
    if t_b > t_a + EPS {
        out.push(at(t_b));
    }
    Ok(out)
}

/// Gyro-integrated body rotation over the span, `R_{b_k}^{b_{k-1}}`.
pub fn integrate_body_rotation(samples: &[ImuSample], gyro_bias: &Vector3<f64>) -> Result<Rotation> {
    if samples.is_empty() {
        return Err(Error::Stream("empty sample span".into()));
    }
    check_monotonic(samples)?;
    let mut r = Rotation::identity();
    for w in samples.windows(2) {
        let omega = (w[0].gyro + w[1].gyro) * 0.5 - gyro_bias;
        r = r.compose(&Rotation::exp(&(omega * (w[1].t - w[0].t))));
    }
    Ok(r)
}

/// Rotation mapping left-camera coordinates at the start of the span to the
/// left camera at its end, `R_{c_{k-1}}^{c_k} = (R_c^b)ᵀ R_{b_{k-1}}^{b_k} R_c^b`.
pub fn integrate_camera_rotation(samples: &[ImuSample], gyro_bias: &Vector3<f64>, t_cb: &Pose) -> Result<Rotation> {
    let body = integrate_body_rotation(samples, gyro_bias)?.inverse();
    let r_cb = t_cb.rotation;
    Ok(r_cb.inverse().compose(&body).compose(&r_cb))
}

/// `n_k = R n_{k-1}`, renormalized.
pub fn propagate_normal(prev: &PriorNormal, r: &Rotation, t: f64) -> PriorNormal {
    PriorNormal {
        n: r.rotate(&prev.n).normalize(),
        t,
    }
}

/// Thresholds for the at-rest check and the lift-off detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StationarityConfig {
    /// Length of the leading window that must be at rest, s.
    pub window_s: f64,
    /// Allowed deviation of the mean specific-force magnitude from g, in units of g.
    pub accel_tolerance_g: f64,
    /// Allowed mean gyro magnitude, rad/s.
    pub gyro_tolerance: f64,
    /// Moving-average length used to detect lift-off, s.
    pub liftoff_window_s: f64,
    /// Mean deviation of the specific force from its at-rest value that
    /// counts as lift-off, m/s².
    pub liftoff_threshold: f64,
    /// Propagation starts this long before the detecting window, s.
    pub guard_s: f64,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        Self {
            window_s: 0.5,
            accel_tolerance_g: 0.05,
            gyro_tolerance: 0.03,
            liftoff_window_s: 0.2,
            liftoff_threshold: 1.0,
            guard_s: 0.1,
        }
    }
}

/// Outcome of the at-rest analysis of an IMU stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stationarity {
    /// Start of IMU-only propagation.
    pub t0: f64,
    /// Whether movement was detected at all.
    pub lifted_off: bool,
    pub mean_accel: Vector3<f64>,
    pub mean_gyro: Vector3<f64>,
    /// Attitude `R_b^w` levelled from the mean specific force, yaw zero.
    pub attitude: Rotation,
}

impl Stationarity {
    /// Body state at rest at the world origin at `t0`.
    pub fn initial_state(&self) -> NavState {
        NavState::new(self.t0, self.attitude, Vector3::zeros(), Vector3::zeros())
    }
}

/// Roll and pitch from a specific-force vector measured at rest.
pub fn level_attitude(mean_accel: &Vector3<f64>) -> Rotation {
    let f = mean_accel;
    let roll = (-f.y).atan2(-f.z);
    let pitch = f.x.atan2((f.y * f.y + f.z * f.z).sqrt());
    Rotation::from_euler_ned(roll, pitch, 0.0)
}

fn mean_of(samples: &[ImuSample]) -> (Vector3<f64>, Vector3<f64>) {
    let n = samples.len() as f64;
    let (g, a) = samples.iter().fold((Vector3::zeros(), Vector3::zeros()), |(g, a), s| {
        (g + s.gyro, a + s.accel)
    });
    (g / n, a / n)
}

/// Checks that the stream starts at rest and finds where motion begins.
///
/// The rest test uses window means so that it is insensitive to white
/// sensor noise. Lift-off is the first moving-average window whose specific
/// force departs from the at-rest mean by more than the threshold.
pub fn detect_stationarity(
    samples: &[ImuSample],
    cfg: &StationarityConfig,
    gravity: &Vector3<f64>,
) -> Result<Stationarity> {
    check_monotonic(samples)?;
    let Some(first) = samples.first() else {
        return Err(Error::InsufficientData { needed: 2, got: 0 });
    };
    let rest: Vec<ImuSample> = samples
        .iter()
        .take_while(|s| s.t <= first.t + cfg.window_s + 1e-9)
        .copied()
        .collect();
    let span = rest.last().map_or(0.0, |s| s.t - first.t);
    if rest.len() < 2 || span < cfg.window_s - 1e-9 {
        return Err(Error::InsufficientData {
            needed: (cfg.window_s * 1e3) as usize,
            got: (span * 1e3) as usize,
        });
    }
    let (mean_gyro, mean_accel) = mean_of(&rest);
    let g = gravity.norm();
    if (mean_accel.norm() - g).abs() > cfg.accel_tolerance_g * g || mean_gyro.norm() > cfg.gyro_tolerance {
        return Err(Error::Stream(format!(
            "not at rest during the first {} s (|a| = {:.3}, |w| = {:.4})",
            cfg.window_s,
            mean_accel.norm(),
            mean_gyro.norm()
        )));
    }

    let n = rest.len().max(2);
    let m = samples
        .iter()
        .take_while(|s| s.t <= first.t + cfg.liftoff_window_s + 1e-9)
        .count()
        .max(1);
    let mut t0 = samples[samples.len() - 1].t;
    let mut lifted_off = false;
    let mut sum = Vector3::zeros();
    for (k, s) in samples.iter().enumerate() {
        sum += s.accel;
        if k + 1 > m {
            sum -= samples[k - m].accel;
        }
        if k + 1 >= m && k >= n && ((sum / m as f64) - mean_accel).norm() > cfg.liftoff_threshold {
            let start = samples[k + 1 - m].t - cfg.guard_s;
            t0 = start.max(first.t);
            lifted_off = true;
            break;
        }
    }
    // Snap to a sample so that propagation starts on the measurement grid.
    let k0 = samples.partition_point(|s| s.t <= t0 + 1e-9).saturating_sub(1);
    // Level from the whole at-rest prefix once its end is known.
    let (mean_gyro, mean_accel) = if lifted_off && k0 + 1 > rest.len() {
        mean_of(&samples[..=k0])
    } else {
        (mean_gyro, mean_accel)
    };
    Ok(Stationarity {
        t0: samples[k0].t,
        lifted_off,
        mean_accel,
        mean_gyro,
        attitude: level_attitude(&mean_accel),
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct ImuRow {
    t: f64,
    gx: f64,
    gy: f64,
    gz: f64,
    ax: f64,
    ay: f64,
    az: f64,
}

/// Reads `t,gx,gy,gz,ax,ay,az` rows.
pub fn read_imu_csv<R: Read>(reader: R) -> Result<Vec<ImuSample>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: ImuRow = row?;
        out.push(ImuSample::new(
            r.t,
            Vector3::new(r.gx, r.gy, r.gz),
            Vector3::new(r.ax, r.ay, r.az),
        ));
    }
    check_monotonic(&out)?;
    Ok(out)
}

pub fn write_imu_csv<W: Write>(writer: W, samples: &[ImuSample]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for s in samples {
        wtr.serialize(ImuRow {
            t: s.t,
            gx: s.gyro.x,
            gy: s.gyro.y,
            gz: s.gyro.z,
            ax: s.accel.x,
            ay: s.accel.y,
            az: s.accel.z,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn load_imu(path: &Path) -> Result<Vec<ImuSample>> {
    read_imu_csv(std::fs::File::open(path)?)
}
