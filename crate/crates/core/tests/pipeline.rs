use planar_init::harness::evaluate;
use planar_init::imu::{detect_stationarity, ned_gravity, StationarityConfig};
use planar_init::initializer::{
    run_initialization, run_initialization_timed, AttitudeSource, InitStatus, InitializationResult, PipelineConfig,
};
use planar_init::simulator::{
    derive_seed, generate_dataset, generate_trajectory, synthesize_imu, Dataset, DatasetConfig, GroundTruth, ImuNoise,
    ProfileKind, ScenePreset, TrajectoryProfile,
};
use planar_init::weighting::DeviationMode;
use planar_init::{Error, Stage};

fn dataset(cfg: &DatasetConfig) -> (Dataset, GroundTruth) {
    generate_dataset(cfg).unwrap()
}

fn init(ds: &Dataset, cfg: &PipelineConfig, seed: u64) -> InitializationResult {
    run_initialization(&ds.frames, &ds.imu, &ds.rig.rig().unwrap(), cfg, seed).unwrap()
}

#[test]
fn noise_free_take_offs_are_exact() {
    for (kind, attitude) in [
        (ProfileKind::Vertical, AttitudeSource::Imu),
        (ProfileKind::Oblique, AttitudeSource::Imu),
        (ProfileKind::Vertical, AttitudeSource::Homography),
        (ProfileKind::Oblique, AttitudeSource::Pnp),
    ] {
        let (ds, gt) = dataset(&DatasetConfig::new(ScenePreset::Helipad, kind, 21).noise_free());
        let cfg = PipelineConfig {
            attitude,
            ..PipelineConfig::default()
        };
        let r = init(&ds, &cfg, 1);
        assert_eq!(r.status, InitStatus::Initialized, "{kind} {attitude:?}");
        let (m, samples) = evaluate(&r, &ds.truth, 0.025).unwrap();
        assert_eq!(samples.len(), cfg.window_size);
        for v in [m.translation_rmse, m.velocity_rmse] {
            assert!(v.iter().all(|e| *e < 1e-4), "{kind} {attitude:?}: {v:?}");
        }
        assert!(
            m.euler_rmse.iter().all(|e| *e < 1e-5),
            "{kind} {attitude:?}: {:?}",
            m.euler_rmse
        );

        let first = r.diagnostics.pairs.first().unwrap();
        let d = gt.frames[first.frame_i as usize].distance;
        assert!((r.scale.unwrap() - d).abs() < 1e-6 * d);
        let gate = r.diagnostics.gate_frame.unwrap() as usize;
        assert!(-gt.frames[gate].body.position.z >= cfg.preset_height_m);
        assert!(-gt.frames[gate - 1].body.position.z < cfg.preset_height_m);
    }
}

#[test]
fn results_are_reproducible_and_timings_stay_out_of_them() {
    let (ds, _) = dataset(&DatasetConfig::new(ScenePreset::Lawn, ProfileKind::Oblique, 22));
    let rig = ds.rig.rig().unwrap();
    let cfg = PipelineConfig::default();
    let (a, timings) = run_initialization_timed(&ds.frames, &ds.imu, &rig, &cfg, 7).unwrap();
    let b = run_initialization(&ds.frames, &ds.imu, &rig, &cfg, 7).unwrap();
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(timings.contains_key("stationarity"), "{timings:?}");
}

#[test]
fn both_weightings_initialize_under_default_noise() {
    let (ds, _) = dataset(&DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 23));
    for deviation in [DeviationMode::Fixed, DeviationMode::Dynamic] {
        let cfg = PipelineConfig {
            deviation,
            ..PipelineConfig::default()
        };
        let r = init(&ds, &cfg, 3);
        assert!(r.is_initialized(), "{deviation}");
        assert_eq!(r.diagnostics.deviation, deviation);
        let (m, _) = evaluate(&r, &ds.truth, 0.025).unwrap();
        assert!(
            m.translation_rmse.iter().all(|e| *e < 0.3),
            "{deviation}: {:?}",
            m.translation_rmse
        );
    }
}

#[test]
fn too_few_features_fall_back_to_the_imu() {
    let mut cfg = DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 24);
    cfg.scene.feature_count = 300;
    let (ds, _) = dataset(&cfg);
    let r = init(&ds, &PipelineConfig::default(), 1);
    assert_eq!(r.status, InitStatus::ImuOnlyFallback);
    assert!(r.diagnostics.min_features_seen < 20);
    assert_eq!(r.keyframes.len(), 10);
    assert!(r.scale.is_none());
}

#[test]
fn hovering_reports_pure_rotation() {
    let (ds, _) = dataset(&DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Hover, 25));
    let r = init(&ds, &PipelineConfig::default(), 1);
    assert_eq!(r.status, InitStatus::PureRotation);
    assert!(r.diagnostics.max_parallax.unwrap() < PipelineConfig::default().min_parallax);
}

#[test]
fn short_climb_never_reaches_the_gate() {
    let mut cfg = DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 26);
    cfg.profile.duration_s = 3.05;
    let (ds, _) = dataset(&cfg);
    let err = run_initialization(
        &ds.frames,
        &ds.imu,
        &ds.rig.rig().unwrap(),
        &PipelineConfig::default(),
        1,
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Propagation));
    assert!(err.to_string().contains("preset height"), "{err}");
}

#[test]
fn moving_start_is_a_stationarity_failure() {
    let (mut ds, _) = dataset(&DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 27));
    let skip = ds.imu.iter().position(|s| s.t >= 2.5).unwrap();
    ds.imu.drain(..skip);
    let err = run_initialization(
        &ds.frames,
        &ds.imu,
        &ds.rig.rig().unwrap(),
        &PipelineConfig::default(),
        1,
    )
    .unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Stationarity));
}

#[test]
fn invalid_configuration_is_rejected_before_running() {
    let (ds, _) = dataset(&DatasetConfig::new(ScenePreset::Helipad, ProfileKind::Vertical, 28).noise_free());
    let cfg = PipelineConfig {
        preset_height_m: 3.0,
        ..PipelineConfig::default()
    };
    let err = run_initialization(&ds.frames, &ds.imu, &ds.rig.rig().unwrap(), &cfg, 1).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn lift_off_is_not_triggered_by_sensor_noise() {
    let gravity = ned_gravity();
    let cfg = StationarityConfig::default();
    for seed in 0..200u64 {
        let kind = if seed % 2 == 0 {
            ProfileKind::Vertical
        } else {
            ProfileKind::Oblique
        };
        let profile = TrajectoryProfile::new(kind);
        let imu = synthesize_imu(
            &generate_trajectory(&profile),
            &ImuNoise::default(),
            &gravity,
            derive_seed(seed, 2),
        );
        let rest = detect_stationarity(&imu, &cfg, &gravity).unwrap();
        assert!(rest.lifted_off);
        assert!(
            rest.t0 <= profile.stationary_s && rest.t0 > profile.stationary_s - 0.3,
            "seed {seed}: propagation starts at {}",
            rest.t0
        );
    }
}
