use serde::{Deserialize, Serialize};

use crate::geometry::{to_euler_ned, wrap_angle, Rotation};

/// Root-mean-square; zero for an empty sample.
pub fn rmse(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Box-plot summary: minimum, quartiles and maximum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    /// Quartiles by linear interpolation between order statistics; `None`
    /// for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

/// Linearly interpolated quantile of an ascending, non-empty sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Estimated minus true NED Euler angles (roll, pitch, yaw), each wrapped
/// to `(-π, π]`.
pub fn euler_error(estimate: &Rotation, truth: &Rotation) -> [f64; 3] {
    let e = to_euler_ned(estimate).as_array();
    let t = to_euler_ned(truth).as_array();
    [
        wrap_angle(e[0] - t[0]),
        wrap_angle(e[1] - t[1]),
        wrap_angle(e[2] - t[2]),
    ]
}
