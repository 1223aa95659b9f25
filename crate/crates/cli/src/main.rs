use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use sha2::{Digest, Sha256};

use planar_init::harness::{
    evaluate, run_sweep, write_csv, write_errors_csv, Comparison, ErrorSample, LabeledReport, MetricsReport,
    SweepConfig, REPORT_SCHEMA_VERSION,
};
use planar_init::initializer::{run_initialization_timed, InitStatus, InitializationResult, PipelineConfig};
use planar_init::simulator::{
    generate_dataset, load_dataset, write_dataset, write_json, Dataset, DatasetConfig, ProfileKind, ScenePreset,
    DATASET_FILES,
};
use planar_init::weighting::DeviationMode;

const RESULT_FILE: &str = "result.json";
const METRICS_FILE: &str = "metrics.json";
const ERRORS_FILE: &str = "errors.csv";

#[derive(Parser)]
#[command(
    name = "planar-init",
    version,
    about = "Take-off initialization for a downward-looking stereo camera and IMU"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a take-off and write the dataset files.
    Generate(GenerateArgs),
    /// Initialize on a dataset and score the result against its ground truth.
    Init(InitArgs),
    /// Score saved results, or compare fixed and dynamic weighting.
    Evaluate(EvaluateArgs),
    /// Run seeded trials over a scene × profile × weighting matrix.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "helipad")]
    scene: ScenePreset,
    #[arg(long, default_value = "vertical")]
    profile: ProfileKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Dataset configuration JSON; `--scene`, `--profile` and `--seed` override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// No pixel or IMU noise.
    #[arg(long)]
    noise_free: bool,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline configuration JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    deviation: Option<DeviationMode>,
    #[arg(long)]
    fixed_deviation_px: Option<f64>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Result JSON to score; repeat to compare runs. Defaults to `<out>/result.json`.
    #[arg(long)]
    result: Vec<PathBuf>,
    /// Run the pipeline with fixed and with dynamic weighting and compare them.
    #[arg(long, conflicts_with = "result")]
    compare_deviation: bool,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// Sweep configuration JSON (matrix, trials, dataset overrides, pipeline).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    scene: Vec<ScenePreset>,
    #[arg(long)]
    profile: Vec<ProfileKind>,
    #[arg(long)]
    deviation: Vec<DeviationMode>,
    #[arg(long)]
    fixed_deviation_px: Option<f64>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Io(anyhow::Error),
    Pipeline(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Usage(_) => 1,
            Self::Io(_) => 2,
            Self::Pipeline(_) => 3,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Self::Usage(e) | Self::Io(e) | Self::Pipeline(e) => e,
        }
    }
}

trait Classify<T> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
    fn usage(self, what: impl FnOnce() -> String) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn io(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Io(e.into().context(what())))
    }

    fn usage(self, what: impl FnOnce() -> String) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into().context(what())))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PLANAR_INIT_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Init(a) => cmd_init(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Sweep(a) => cmd_sweep(&a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let file = File::open(path).io(|| format!("cannot open {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).usage(|| format!("invalid JSON in {}", path.display()))
}

/// SHA-256 over the dataset files in their fixed order, each prefixed by
/// its name.
fn dataset_digest(dir: &Path) -> anyhow::Result<String> {
    let mut hasher = Sha256::new();
    for name in DATASET_FILES {
        let mut bytes = Vec::new();
        File::open(dir.join(name))
            .with_context(|| format!("cannot open {name}"))?
            .read_to_end(&mut bytes)?;
        hasher.update(name.as_bytes());
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<DatasetConfig>(p)?,
        None => DatasetConfig::default(),
    };
    let base = DatasetConfig::new(a.scene, a.profile, a.seed);
    if a.config.is_none() || cfg.scene.preset != a.scene {
        cfg.scene = base.scene;
    }
    if a.config.is_none() || cfg.profile.kind != a.profile {
        cfg.profile = base.profile;
    }
    cfg.seed = a.seed;
    if a.noise_free {
        cfg = cfg.noise_free();
    }
    let (ds, _) = generate_dataset(&cfg).usage(|| "cannot generate the dataset".into())?;
    write_dataset(&a.out, &ds).io(|| format!("cannot write {}", a.out.display()))?;
    let digest = dataset_digest(&a.out).io(|| "cannot hash the dataset".into())?;
    info!("{} frames, {} IMU samples", ds.frames.len(), ds.imu.len());
    println!("{digest}");
    Ok(())
}

fn pipeline_config(a: &PipelineArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<PipelineConfig>(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(d) = a.deviation {
        cfg.deviation = d;
    }
    if let Some(px) = a.fixed_deviation_px {
        cfg.fixed_deviation_px = px;
    }
    cfg.validate().usage(|| "invalid pipeline configuration".into())?;
    Ok(cfg)
}

fn load(dir: &Path) -> Result<Dataset, Failure> {
    load_dataset(dir).io(|| format!("cannot load dataset {}", dir.display()))
}

fn tolerance(ds: &Dataset) -> f64 {
    0.5 / ds.rig.camera_rate_hz
}

fn initialize(
    ds: &Dataset,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(InitializationResult, MetricsReport, Vec<ErrorSample>), Failure> {
    let rig = ds.rig.rig().usage(|| "invalid rig".into())?;
    let (result, timings) = match run_initialization_timed(&ds.frames, &ds.imu, &rig, cfg, seed) {
        Ok(x) => x,
        Err(e) => (InitializationResult::failed(&e), Default::default()),
    };
    let (mut metrics, errors) = match evaluate(&result, &ds.truth, tolerance(ds)) {
        Ok(x) => x,
        Err(e) => {
            if result.status != InitStatus::Failed {
                warn!("no metrics: {e}");
            }
            (empty_metrics(&result), Vec::new())
        }
    };
    metrics.timings_ms = timings;
    Ok((result, metrics, errors))
}

fn empty_metrics(result: &InitializationResult) -> MetricsReport {
    MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION,
        status: result.status,
        deviation: result.diagnostics.deviation,
        samples: 0,
        translation_rmse: [0.0; 3],
        velocity_rmse: [0.0; 3],
        euler_rmse: [0.0; 3],
        scale: result.scale,
        indicator: result.diagnostics.indicator,
        boxplots: Default::default(),
        timings_ms: Default::default(),
    }
}

fn write_errors(path: &Path, errors: &[ErrorSample]) -> Result<(), Failure> {
    let file = File::create(path).io(|| format!("cannot create {}", path.display()))?;
    write_errors_csv(BufWriter::new(file), errors).io(|| format!("cannot write {}", path.display()))
}

fn report_status(result: &InitializationResult) -> Result<(), Failure> {
    println!("{}", result.status);
    match &result.failure {
        Some(f) => Err(Failure::Pipeline(anyhow::anyhow!("{}", f.message))),
        None => Ok(()),
    }
}

fn cmd_init(a: &InitArgs) -> Result<(), Failure> {
    let cfg = pipeline_config(&a.pipeline)?;
    let ds = load(&a.dataset)?;
    let (result, metrics, errors) = initialize(&ds, &cfg, a.pipeline.seed)?;
    std::fs::create_dir_all(&a.out).io(|| format!("cannot create {}", a.out.display()))?;
    write_json(&a.out.join(RESULT_FILE), &result).io(|| "cannot write the result".into())?;
    write_json(&a.out.join(METRICS_FILE), &metrics).io(|| "cannot write the metrics".into())?;
    write_errors(&a.out.join(ERRORS_FILE), &errors)?;
    report_status(&result)
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), Failure> {
    let ds = load(&a.dataset)?;
    std::fs::create_dir_all(&a.out).io(|| format!("cannot create {}", a.out.display()))?;
    let mut runs = Vec::new();
    if a.compare_deviation {
        let base = pipeline_config(&a.pipeline)?;
        for mode in [DeviationMode::Fixed, DeviationMode::Dynamic] {
            let cfg = PipelineConfig {
                deviation: mode,
                ..base.clone()
            };
            let (result, metrics, errors) = initialize(&ds, &cfg, a.pipeline.seed)?;
            write_json(&a.out.join(format!("result_{mode}.json")), &result).io(|| "cannot write the result".into())?;
            runs.push((mode.to_string(), metrics, errors));
        }
    } else {
        let paths = if a.result.is_empty() {
            vec![a.out.join(RESULT_FILE)]
        } else {
            a.result.clone()
        };
        for (k, path) in paths.iter().enumerate() {
            let result: InitializationResult = read_json(path)?;
            let (metrics, errors) =
                evaluate(&result, &ds.truth, tolerance(&ds)).usage(|| format!("cannot evaluate {}", path.display()))?;
            let stem = path
                .file_stem()
                .map_or_else(|| format!("run{k}"), |s| s.to_string_lossy().into_owned());
            let label = if runs.iter().any(|(l, _, _)| *l == stem) {
                format!("{stem}_{k}")
            } else {
                stem
            };
            runs.push((label, metrics, errors));
        }
    }
    if let [(_, metrics, errors)] = runs.as_slice() {
        write_json(&a.out.join(METRICS_FILE), metrics).io(|| "cannot write the metrics".into())?;
        write_errors(&a.out.join(ERRORS_FILE), errors)?;
    } else {
        for (label, _, errors) in &runs {
            write_errors(&a.out.join(format!("errors_{label}.csv")), errors)?;
        }
        let comparison = Comparison {
            schema_version: REPORT_SCHEMA_VERSION,
            runs: runs
                .iter()
                .map(|(label, metrics, _)| LabeledReport {
                    label: label.clone(),
                    metrics: metrics.clone(),
                })
                .collect(),
        };
        write_json(&a.out.join("comparison.json"), &comparison).io(|| "cannot write the comparison".into())?;
    }
    for (label, m, _) in &runs {
        let t = m.translation_rmse;
        let v = m.velocity_rmse;
        println!(
            "{label}: {} translation RMSE [{:.4}, {:.4}, {:.4}] m, velocity RMSE [{:.4}, {:.4}, {:.4}] m/s",
            m.status, t[0], t[1], t[2], v[0], v[1], v[2]
        );
    }
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<(), Failure> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<SweepConfig>(p)?,
        None => SweepConfig::default(),
    };
    if let Some(n) = a.trials {
        cfg.trials = n;
    }
    if !a.scene.is_empty() {
        cfg.scenes = a.scene.clone();
    }
    if !a.profile.is_empty() {
        cfg.profiles = a.profile.clone();
    }
    if !a.deviation.is_empty() {
        cfg.deviations = a.deviation.clone();
    }
    if let Some(px) = a.fixed_deviation_px {
        cfg.pipeline.fixed_deviation_px = px;
    }
    let report = run_sweep(&cfg, a.seed, a.jobs).usage(|| "invalid sweep".into())?;
    std::fs::create_dir_all(&a.out).io(|| format!("cannot create {}", a.out.display()))?;
    for (name, result) in [
        ("trials.csv", write_rows(&a.out.join("trials.csv"), &report.trials)),
        ("summary.csv", write_rows(&a.out.join("summary.csv"), &report.summary)),
    ] {
        result.io(|| format!("cannot write {name}"))?;
    }
    for s in &report.summary {
        println!(
            "{} {} {}: {}/{} initialized, selection rate {}",
            s.scene.name(),
            s.profile,
            s.deviation,
            s.initialized,
            s.trials,
            s.selection_rate.map_or("n/a".into(), |r| format!("{r:.4}"))
        );
    }
    Ok(())
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    write_csv(BufWriter::new(File::create(path)?), rows)?;
    Ok(())
}
