use std::path::Path;
use std::process::{Command, Output};

use planar_init::harness::{Comparison, MetricsReport};
use planar_init::initializer::{InitStatus, InitializationResult, PipelineConfig};
use planar_init::simulator::{DatasetConfig, ProfileKind, SceneConfig, SceneInfo, ScenePreset};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_planar-init"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cli(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read<T: serde::de::DeserializeOwned>(p: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn generate(dir: &Path, extra: &[&str]) -> String {
    let mut args = vec!["generate", "--out", path(dir)];
    args.extend_from_slice(extra);
    ok(&args).trim().to_string()
}

#[test]
fn generate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = generate(&tmp.path().join("a"), &["--seed", "9"]);
    let b = generate(&tmp.path().join("b"), &["--seed", "9"]);
    let c = generate(&tmp.path().join("c"), &["--seed", "10"]);
    assert_eq!(a.len(), 64);
    assert_eq!(a, b);
    assert_ne!(a, c);
    for name in ["rig.json", "imu.csv", "features.csv", "groundtruth.csv", "scene.json"] {
        assert_eq!(
            std::fs::read(tmp.path().join("a").join(name)).unwrap(),
            std::fs::read(tmp.path().join("b").join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn lawn_scene_records_its_roughness() {
    let tmp = tempfile::tempdir().unwrap();
    generate(tmp.path(), &["--scene", "lawn", "--profile", "oblique"]);
    let scene: SceneInfo = read(&tmp.path().join("scene.json"));
    assert_eq!(scene.preset, ScenePreset::Lawn);
    assert_eq!(scene.profile, ProfileKind::Oblique);
    assert!((scene.roughness - 0.05).abs() < 1e-12);
}

#[test]
fn usage_and_io_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        cli(&["generate", "--scene", "moon", "--out", path(tmp.path())])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(cli(&["bogus"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));

    let missing = tmp.path().join("missing");
    let out = tmp.path().join("run");
    assert_eq!(
        cli(&["init", "--dataset", path(&missing), "--out", path(&out)])
            .status
            .code(),
        Some(2)
    );

    let ds = tmp.path().join("ds");
    generate(&ds, &["--noise-free"]);
    let cfg = tmp.path().join("pipeline.json");
    let bad = PipelineConfig {
        preset_height_m: 3.5,
        ..PipelineConfig::default()
    };
    std::fs::write(&cfg, serde_json::to_string(&bad).unwrap()).unwrap();
    let run = cli(&[
        "init",
        "--dataset",
        path(&ds),
        "--out",
        path(&out),
        "--config",
        path(&cfg),
    ]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("preset_height_m"));
}

#[test]
fn noise_free_init_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("run");
    generate(&ds, &["--noise-free", "--seed", "4"]);
    let stdout = ok(&["init", "--dataset", path(&ds), "--out", path(&out)]);
    assert_eq!(stdout.trim(), "initialized");
    let result: InitializationResult = read(&out.join("result.json"));
    assert_eq!(result.status, InitStatus::Initialized);
    assert_eq!(result.keyframes.len(), 10);
    let metrics: MetricsReport = read(&out.join("metrics.json"));
    assert_eq!(metrics.samples, 10);
    assert!(
        metrics.translation_rmse.iter().all(|e| *e < 1e-4),
        "{:?}",
        metrics.translation_rmse
    );
    assert!(
        metrics.velocity_rmse.iter().all(|e| *e < 1e-4),
        "{:?}",
        metrics.velocity_rmse
    );
    assert!(!metrics.timings_ms.is_empty());
    let csv = std::fs::read_to_string(out.join("errors.csv")).unwrap();
    assert_eq!(csv.lines().count(), 11);
}

#[test]
fn sparse_scene_falls_back_to_imu() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("dataset.json");
    let mut cfg = DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 0);
    cfg.scene.feature_count = 300;
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ds = tmp.path().join("ds");
    let out = tmp.path().join("run");
    generate(&ds, &["--config", path(&cfg_path), "--seed", "2"]);
    let stdout = ok(&["init", "--dataset", path(&ds), "--out", path(&out)]);
    assert_eq!(stdout.trim(), "imu-only-fallback");
    let result: InitializationResult = read(&out.join("result.json"));
    assert!(result.scale.is_none());
    assert!(!result.keyframes.is_empty());
}

#[test]
fn oblique_take_off_beside_an_apron_initializes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg_path = tmp.path().join("dataset.json");
    let cfg = DatasetConfig {
        scene: SceneConfig::preset(ScenePreset::Helipad).with_apron(),
        ..DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Oblique, 0)
    };
    std::fs::write(&cfg_path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let ds = tmp.path().join("ds");
    generate(
        &ds,
        &["--config", path(&cfg_path), "--profile", "oblique", "--seed", "6"],
    );
    let scene: SceneInfo = read(&ds.join("scene.json"));
    assert_eq!(scene.dropout.len(), 1);
    let out = tmp.path().join("run");
    assert_eq!(
        ok(&["init", "--dataset", path(&ds), "--out", path(&out)]).trim(),
        "initialized"
    );
}

#[test]
fn hover_reports_pure_rotation_and_exits_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    generate(&ds, &["--profile", "hover"]);
    let out = tmp.path().join("run");
    assert_eq!(
        ok(&["init", "--dataset", path(&ds), "--out", path(&out)]).trim(),
        "pure-rotation"
    );
}

#[test]
fn evaluate_scores_saved_results_and_compares_weightings() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = tmp.path().join("ds");
    let run = tmp.path().join("run");
    generate(&ds, &["--seed", "3"]);
    ok(&["init", "--dataset", path(&ds), "--out", path(&run)]);
    let first: MetricsReport = read(&run.join("metrics.json"));

    let again = tmp.path().join("again");
    let result = run.join("result.json");
    ok(&[
        "evaluate",
        "--dataset",
        path(&ds),
        "--out",
        path(&again),
        "--result",
        path(&result),
    ]);
    let rescored: MetricsReport = read(&again.join("metrics.json"));
    assert_eq!(rescored.translation_rmse, first.translation_rmse);
    assert_eq!(rescored.velocity_rmse, first.velocity_rmse);

    let cmp = tmp.path().join("cmp");
    ok(&[
        "evaluate",
        "--dataset",
        path(&ds),
        "--out",
        path(&cmp),
        "--compare-deviation",
    ]);
    let comparison: Comparison = read(&cmp.join("comparison.json"));
    let labels: Vec<&str> = comparison.runs.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["fixed", "dynamic"]);
    for name in [
        "errors_fixed.csv",
        "errors_dynamic.csv",
        "result_fixed.json",
        "result_dynamic.json",
    ] {
        assert!(cmp.join(name).exists(), "{name}");
    }
}

#[test]
fn sweep_output_does_not_depend_on_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let common = [
        "--trials",
        "3",
        "--scene",
        "helipad",
        "--scene",
        "lawn",
        "--deviation",
        "fixed",
        "--deviation",
        "dynamic",
    ];
    let mut args_a = vec!["sweep", "--out", path(&a), "--jobs", "1"];
    args_a.extend_from_slice(&common);
    let mut args_b = vec!["sweep", "--out", path(&b), "--jobs", "8"];
    args_b.extend_from_slice(&common);
    ok(&args_a);
    ok(&args_b);
    for name in ["trials.csv", "summary.csv"] {
        let x = std::fs::read_to_string(a.join(name)).unwrap();
        assert_eq!(x, std::fs::read_to_string(b.join(name)).unwrap(), "{name}");
    }
    let trials = std::fs::read_to_string(a.join("trials.csv")).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 2 * 3);
    assert_eq!(
        cli(&["sweep", "--out", path(&a), "--trials", "0"]).status.code(),
        Some(1)
    );
}
