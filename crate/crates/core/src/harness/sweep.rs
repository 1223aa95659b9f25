use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::evaluate;
use super::metrics::quantile_sorted;
use crate::error::{Error, Result, Stage};
use crate::initializer::{run_initialization, InitStatus, InitializationResult, PipelineConfig};
use crate::simulator::{
    derive_seed, generate_dataset, DatasetConfig, GroundTruth, ImuNoise, PixelNoise, ProfileKind, ScenePreset,
};
use crate::weighting::DeviationMode;

/// Dataset settings applied on top of the scene and profile presets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOverrides {
    pub pixel_noise: Option<PixelNoise>,
    pub imu_noise: Option<ImuNoise>,
    pub feature_count: Option<usize>,
    pub duration_s: Option<f64>,
}

/// Trial matrix: every scene × profile × deviation cell runs `trials`
/// seeded trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub scenes: Vec<ScenePreset>,
    pub profiles: Vec<ProfileKind>,
    pub deviations: Vec<DeviationMode>,
    pub trials: usize,
    pub dataset: DatasetOverrides,
    pub pipeline: PipelineConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scenes: vec![ScenePreset::Helipad],
            profiles: vec![ProfileKind::Vertical],
            deviations: vec![DeviationMode::Dynamic],
            trials: 10,
            dataset: DatasetOverrides::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.scenes.is_empty() || self.profiles.is_empty() || self.deviations.is_empty() {
            return Err(Error::Config("every sweep axis needs at least one value".into()));
        }
        self.pipeline.validate()
    }

    /// Cells in row-major order: scene, then profile, then deviation.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for &scene in &self.scenes {
            for &profile in &self.profiles {
                for &deviation in &self.deviations {
                    out.push(Cell {
                        scene,
                        profile,
                        deviation,
                    });
                }
            }
        }
        out
    }

    fn dataset_config(&self, cell: &Cell, seed: u64) -> DatasetConfig {
        let mut cfg = DatasetConfig::new(cell.scene, cell.profile, seed);
        let o = &self.dataset;
        if let Some(n) = o.pixel_noise {
            cfg.pixel_noise = n;
        }
        if let Some(n) = o.imu_noise {
            cfg.imu_noise = n;
        }
        if let Some(n) = o.feature_count {
            cfg.scene.feature_count = n;
        }
        if let Some(d) = o.duration_s {
            cfg.profile.duration_s = d;
        }
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub scene: ScenePreset,
    pub profile: ProfileKind,
    pub deviation: DeviationMode,
}

/// One trial, flattened for CSV output. Metrics are empty when the trial
/// produced no keyframes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub scene: ScenePreset,
    pub profile: ProfileKind,
    pub deviation: DeviationMode,
    pub trial: usize,
    pub seed: u64,
    pub status: InitStatus,
    pub failure_stage: Option<Stage>,
    /// Whether the widest pair selected the candidate nearest the true
    /// normal; empty when ambiguous.
    pub selection_match: Option<bool>,
    /// `|ŝ − d| / d` against the true first-camera plane distance.
    pub scale_error: Option<f64>,
    pub rmse_x: Option<f64>,
    pub rmse_y: Option<f64>,
    pub rmse_z: Option<f64>,
    pub rmse_vx: Option<f64>,
    pub rmse_vy: Option<f64>,
    pub rmse_vz: Option<f64>,
    pub rmse_roll: Option<f64>,
    pub rmse_pitch: Option<f64>,
    pub rmse_yaw: Option<f64>,
}

/// Aggregate of one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub scene: ScenePreset,
    pub profile: ProfileKind,
    pub deviation: DeviationMode,
    pub trials: usize,
    pub initialized: usize,
    pub imu_only: usize,
    pub pure_rotation: usize,
    pub failed: usize,
    /// Share of unambiguous trials whose selection matched the truth.
    pub selection_rate: Option<f64>,
    pub scale_error_p50: Option<f64>,
    pub scale_error_p95: Option<f64>,
    pub rmse_x_p50: Option<f64>,
    pub rmse_y_p50: Option<f64>,
    pub rmse_z_p50: Option<f64>,
    pub rmse_vx_p50: Option<f64>,
    pub rmse_vy_p50: Option<f64>,
    pub rmse_vz_p50: Option<f64>,
    pub rmse_roll_p50: Option<f64>,
    pub rmse_pitch_p50: Option<f64>,
    pub rmse_yaw_p50: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub trials: Vec<TrialOutcome>,
    pub summary: Vec<CellSummary>,
}

/// Seed of trial `trial`. Cells share dataset seeds so that their trials
/// see the same data.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    derive_seed(master, trial as u64)
}

/// Runs the whole matrix on `jobs` threads. Outcomes are merged in task
/// order, so the report does not depend on `jobs`.
pub fn run_sweep(cfg: &SweepConfig, master_seed: u64, jobs: usize) -> Result<SweepReport> {
    cfg.validate()?;
    let cells = cfg.cells();
    let tasks: Vec<(Cell, usize)> = cells
        .iter()
        .flat_map(|c| (0..cfg.trials).map(move |k| (*c, k)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let trials: Vec<TrialOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|(cell, k)| run_trial(cfg, cell, *k, trial_seed(master_seed, *k)))
            .collect()
    });
    let summary = cells
        .iter()
        .map(|c| {
            summarize(
                c,
                trials
                    .iter()
                    .filter(|t| t.scene == c.scene && t.profile == c.profile && t.deviation == c.deviation),
            )
        })
        .collect();
    Ok(SweepReport { trials, summary })
}

/// Generates the dataset of one trial, initializes and scores it.
pub fn run_trial(cfg: &SweepConfig, cell: &Cell, trial: usize, seed: u64) -> TrialOutcome {
    let mut out = TrialOutcome {
        scene: cell.scene,
        profile: cell.profile,
        deviation: cell.deviation,
        trial,
        seed,
        status: InitStatus::Failed,
        failure_stage: None,
        selection_match: None,
        scale_error: None,
        rmse_x: None,
        rmse_y: None,
        rmse_z: None,
        rmse_vx: None,
        rmse_vy: None,
        rmse_vz: None,
        rmse_roll: None,
        rmse_pitch: None,
        rmse_yaw: None,
    };
    let generated = generate_dataset(&cfg.dataset_config(cell, seed));
    let (ds, gt) = match generated {
        Ok(x) => x,
        Err(e) => {
            log::warn!("trial {trial}: dataset generation failed: {e}");
            return out;
        }
    };
    let rig = match ds.rig.rig() {
        Ok(r) => r,
        Err(_) => return out,
    };
    let pipeline = PipelineConfig {
        deviation: cell.deviation,
        ..cfg.pipeline.clone()
    };
    let result = run_initialization(&ds.frames, &ds.imu, &rig, &pipeline, derive_seed(seed, 1))
        .unwrap_or_else(|e| InitializationResult::failed(&e));
    out.status = result.status;
    out.failure_stage = result.failure.as_ref().and_then(|f| f.stage);
    out.selection_match = selection_matches(&result, &gt);
    if let (Some(s), Some(pair)) = (result.scale, result.diagnostics.pairs.first()) {
        if let Some(f) = gt.frames.get(pair.frame_i as usize) {
            out.scale_error = Some((s - f.distance).abs() / f.distance);
        }
    }
    let tolerance = 0.5 / ds.rig.camera_rate_hz;
    if let Ok((m, _)) = evaluate(&result, &ds.truth, tolerance) {
        let [x, y, z] = m.translation_rmse;
        let [vx, vy, vz] = m.velocity_rmse;
        let [r, p, w] = m.euler_rmse;
        (out.rmse_x, out.rmse_y, out.rmse_z) = (Some(x), Some(y), Some(z));
        (out.rmse_vx, out.rmse_vy, out.rmse_vz) = (Some(vx), Some(vy), Some(vz));
        (out.rmse_roll, out.rmse_pitch, out.rmse_yaw) = (Some(r), Some(p), Some(w));
    }
    out
}

/// Whether the widest pair picked the candidate whose normal is closest to
/// the true normal of its first camera.
///
/// `None` without a pair, and when neither candidate is at least twice as
/// close to the true normal as the other. Noise then straddles the two
/// solutions, as in a vertical climb where translation and normal are
/// parallel and both candidates scatter around the truth.
pub fn selection_matches(result: &InitializationResult, gt: &GroundTruth) -> Option<bool> {
    let pair = result.diagnostics.pairs.last()?;
    let truth = gt.frames.get(pair.frame_i as usize)?.normal;
    let normals: Vec<_> = pair.candidates.iter().map(|c| c.normal).collect();
    let selected = normals.get(pair.selected).copied().flatten()?;
    let [a, b] = normals.as_slice() else {
        return Some(true);
    };
    let (Some(a), Some(b)) = (a, b) else {
        return Some(true);
    };
    let (da, db) = ((a - truth).norm(), (b - truth).norm());
    if da.max(db) < 2.0 * da.min(db) {
        return None;
    }
    let nearest = if da <= db { a } else { b };
    Some(selected == *nearest)
}

fn summarize<'a>(cell: &Cell, trials: impl Iterator<Item = &'a TrialOutcome>) -> CellSummary {
    let trials: Vec<&TrialOutcome> = trials.collect();
    let count = |s: InitStatus| trials.iter().filter(|t| t.status == s).count();
    let with_selection: Vec<bool> = trials.iter().filter_map(|t| t.selection_match).collect();
    let median = |f: &dyn Fn(&TrialOutcome) -> Option<f64>| quantile(trials.iter().filter_map(|t| f(t)), 0.5);
    CellSummary {
        scene: cell.scene,
        profile: cell.profile,
        deviation: cell.deviation,
        trials: trials.len(),
        initialized: count(InitStatus::Initialized),
        imu_only: count(InitStatus::ImuOnlyFallback),
        pure_rotation: count(InitStatus::PureRotation),
        failed: count(InitStatus::Failed),
        selection_rate: (!with_selection.is_empty())
            .then(|| with_selection.iter().filter(|m| **m).count() as f64 / with_selection.len() as f64),
        scale_error_p50: quantile(trials.iter().filter_map(|t| t.scale_error), 0.5),
        scale_error_p95: quantile(trials.iter().filter_map(|t| t.scale_error), 0.95),
        rmse_x_p50: median(&|t| t.rmse_x),
        rmse_y_p50: median(&|t| t.rmse_y),
        rmse_z_p50: median(&|t| t.rmse_z),
        rmse_vx_p50: median(&|t| t.rmse_vx),
        rmse_vy_p50: median(&|t| t.rmse_vy),
        rmse_vz_p50: median(&|t| t.rmse_vz),
        rmse_roll_p50: median(&|t| t.rmse_roll),
        rmse_pitch_p50: median(&|t| t.rmse_pitch),
        rmse_yaw_p50: median(&|t| t.rmse_yaw),
    }
}

fn quantile(values: impl Iterator<Item = f64>, q: f64) -> Option<f64> {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

/// Writes rows as CSV with a header.
pub fn write_csv<W: Write, T: Serialize>(writer: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
