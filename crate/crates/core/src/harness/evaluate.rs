use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{euler_error, rmse, FiveNumber};
use crate::error::{Error, Result};
use crate::initializer::{InitStatus, InitializationResult, KeyframeState, Percentiles, StageTimings};
use crate::simulator::TruthRecord;
use crate::weighting::DeviationMode;

/// Version of the metrics JSON layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Column names of the per-keyframe error CSV, after `t`.
pub const ERROR_COLUMNS: [&str; 9] = [
    "err_x",
    "err_y",
    "err_z",
    "err_vx",
    "err_vy",
    "err_vz",
    "err_roll",
    "err_pitch",
    "err_yaw",
];

/// Estimate minus truth at one keyframe (m, m/s, rad).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSample {
    pub t: f64,
    pub err_x: f64,
    pub err_y: f64,
    pub err_z: f64,
    pub err_vx: f64,
    pub err_vy: f64,
    pub err_vz: f64,
    pub err_roll: f64,
    pub err_pitch: f64,
    pub err_yaw: f64,
}

impl ErrorSample {
    pub fn values(&self) -> [f64; 9] {
        [
            self.err_x,
            self.err_y,
            self.err_z,
            self.err_vx,
            self.err_vy,
            self.err_vz,
            self.err_roll,
            self.err_pitch,
            self.err_yaw,
        ]
    }
}

/// Accuracy of one initialization against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub status: InitStatus,
    pub deviation: DeviationMode,
    /// Keyframes matched to a ground-truth record.
    pub samples: usize,
    /// Per-axis RMSE, m.
    pub translation_rmse: [f64; 3],
    /// Per-axis RMSE, m/s.
    pub velocity_rmse: [f64; 3],
    /// Roll, pitch and yaw RMSE, rad.
    pub euler_rmse: [f64; 3],
    pub scale: Option<f64>,
    pub indicator: Option<Percentiles>,
    /// Five-number summary of every error column.
    pub boxplots: BTreeMap<String, FiveNumber>,
    /// Wall-clock time per stage, ms; empty when not measured.
    pub timings_ms: StageTimings,
}

/// Pairs every keyframe with the ground-truth record nearest in time, if
/// one lies within `tolerance` s, and returns the errors in keyframe order.
pub fn align_errors(keyframes: &[KeyframeState], truth: &[TruthRecord], tolerance: f64) -> Result<Vec<ErrorSample>> {
    let mut out = Vec::with_capacity(keyframes.len());
    for kf in keyframes {
        let Some(tr) = nearest(truth, kf.t).filter(|r| (r.t - kf.t).abs() <= tolerance) else {
            continue;
        };
        let dp = kf.pose().translation - tr.position();
        let dv = kf.velocity() - tr.velocity();
        let de = euler_error(&kf.pose().rotation, &tr.rotation());
        out.push(ErrorSample {
            t: kf.t,
            err_x: dp.x,
            err_y: dp.y,
            err_z: dp.z,
            err_vx: dv.x,
            err_vy: dv.y,
            err_vz: dv.z,
            err_roll: de[0],
            err_pitch: de[1],
            err_yaw: de[2],
        });
    }
    if out.is_empty() {
        return Err(Error::Alignment(format!(
            "{} estimates, {} truth records, tolerance {tolerance} s",
            keyframes.len(),
            truth.len()
        )));
    }
    Ok(out)
}

/// Truth record closest to `t`; `truth` must be sorted by time.
fn nearest(truth: &[TruthRecord], t: f64) -> Option<&TruthRecord> {
    let k = truth.partition_point(|r| r.t < t);
    let before = k.checked_sub(1).map(|i| &truth[i]);
    let after = truth.get(k);
    match (before, after) {
        (Some(a), Some(b)) => Some(if t - a.t <= b.t - t { a } else { b }),
        (a, b) => a.or(b),
    }
}

/// Metrics of `result` against `truth`. Keyframes are matched to truth
/// within `tolerance` s, normally half the camera period.
pub fn evaluate(
    result: &InitializationResult,
    truth: &[TruthRecord],
    tolerance: f64,
) -> Result<(MetricsReport, Vec<ErrorSample>)> {
    let samples = align_errors(&result.keyframes, truth, tolerance)?;
    let column = |k: usize| samples.iter().map(|s| s.values()[k]).collect::<Vec<f64>>();
    let rmse3 = |first: usize| [rmse(&column(first)), rmse(&column(first + 1)), rmse(&column(first + 2))];
    let boxplots = ERROR_COLUMNS
        .iter()
        .enumerate()
        .filter_map(|(k, name)| FiveNumber::of(&column(k)).map(|f| (name.to_string(), f)))
        .collect();
    let report = MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        status: result.status,
        deviation: result.diagnostics.deviation,
        samples: samples.len(),
        translation_rmse: rmse3(0),
        velocity_rmse: rmse3(3),
        euler_rmse: rmse3(6),
        scale: result.scale,
        indicator: result.diagnostics.indicator,
        boxplots,
        timings_ms: StageTimings::new(),
    };
    Ok((report, samples))
}

/// Writes the per-keyframe errors as CSV with a header row.
pub fn write_errors_csv<W: Write>(writer: W, samples: &[ErrorSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Several evaluated runs side by side, e.g. fixed and dynamic weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema_version: u32,
    pub runs: Vec<LabeledReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub label: String,
    pub metrics: MetricsReport,
}
