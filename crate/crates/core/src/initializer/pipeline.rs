use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};

use super::motion::{camera_velocity, metric_alignment, recover_scale_stacked, select_solution, triangulate_stereo};
use super::pnp::{solve_pnp, PnpPoint};
use super::velocity::{refine_body_velocity, FlowFeature, VelocityProblem};
use super::window::{gather_window, KeyframeWindow};
use super::{
    AttitudeSource, Diagnostics, InitStatus, InitializationResult, KeyframeState, PairDiagnostics, Percentiles,
    PipelineConfig, VelocityDiagnostics, RESULT_SCHEMA_VERSION,
};
use crate::error::{Error, Result, Stage, StageExt};
use crate::geometry::{dehomogenize, CameraRig, Frame, Pose};
use crate::homography::{decompose, estimate, filter_positive_depth, indicator, Correspondence, HomographySolution};
use crate::imu::{
    detect_stationarity, integrate_camera_rotation, propagate, propagate_normal, samples_between, ImuSample, NavState,
    PriorNormal,
};
use crate::simulator::derive_seed;
use crate::tracks::FrameObservations;
use crate::weighting::{stereo_deviation, temporal_deviation, weight, CameraMotion, DeviationMode};

/// Wall-clock time per pipeline stage, ms.
pub type StageTimings = BTreeMap<String, f64>;

/// Runs the take-off initialization on a recording.
///
/// The IMU stream is propagated from the end of the at-rest prefix; once the
/// body has climbed `preset_height_m`, a window of consecutive keyframes is
/// initialized visually. Too few features yield an IMU-only result, no
/// parallax a pure-rotation result, and any stage error a labelled failure.
pub fn run_initialization(
    frames: &[FrameObservations],
    imu: &[ImuSample],
    rig: &CameraRig,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<InitializationResult> {
    run_initialization_timed(frames, imu, rig, cfg, seed).map(|(r, _)| r)
}

/// [`run_initialization`] plus per-stage wall-clock timings. Timings are kept
/// out of the result so that results stay bit-identical across runs.
pub fn run_initialization_timed(
    frames: &[FrameObservations],
    imu: &[ImuSample],
    rig: &CameraRig,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<(InitializationResult, StageTimings)> {
    cfg.validate()?;
    let mut run = Run {
        rig,
        cfg,
        seed,
        gravity: Vector3::from(cfg.gravity),
        gyro_bias: Vector3::from(cfg.gyro_bias),
        accel_bias: Vector3::from(cfg.accel_bias),
        timings: StageTimings::new(),
        clock: Instant::now(),
        diag: Diagnostics {
            deviation: cfg.deviation,
            ..Diagnostics::default()
        },
    };
    let result = run.execute(frames, imu)?;
    Ok((result, run.timings))
}

/// IMU-only state and prior normal at one camera frame.
#[derive(Debug, Clone, Copy)]
struct Tracked {
    index: usize,
    state: NavState,
    prior: PriorNormal,
}

struct Run<'a> {
    rig: &'a CameraRig,
    cfg: &'a PipelineConfig,
    seed: u64,
    gravity: Vector3<f64>,
    gyro_bias: Vector3<f64>,
    accel_bias: Vector3<f64>,
    timings: StageTimings,
    clock: Instant,
    diag: Diagnostics,
}

/// Visual solution of one window.
struct Solved {
    cameras: Vec<Pose>,
    bodies: Vec<Pose>,
    scale: f64,
    selected: HomographySolution,
    plane_normal_w: Vector3<f64>,
}

impl Run<'_> {
    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        let ms = (now - self.clock).as_secs_f64() * 1e3;
        *self.timings.entry(stage.to_string()).or_insert(0.0) += ms;
        self.clock = now;
    }

    fn execute(&mut self, frames: &[FrameObservations], imu: &[ImuSample]) -> Result<InitializationResult> {
        let rest = detect_stationarity(imu, &self.cfg.stationarity, &self.gravity).stage(Stage::Stationarity)?;
        self.diag.t0 = rest.t0;
        self.lap(Stage::Stationarity);

        let start = if rest.lifted_off {
            rest.initial_state()
        } else {
            // Never moved: the whole stream is usable from its first sample.
            NavState::new(imu[0].t, rest.attitude, Vector3::zeros(), Vector3::zeros())
        }
        .with_biases(self.gyro_bias, self.accel_bias);
        let track = self.track(frames, imu, start).stage(Stage::Propagation)?;
        let gate = rest
            .lifted_off
            .then(|| {
                track
                    .iter()
                    .position(|t| -t.state.position().z >= self.cfg.preset_height_m)
            })
            .flatten();
        self.lap(Stage::Propagation);

        let Some(g) = gate else {
            return self.without_gate(frames, imu, &track);
        };
        let gate_frame = &frames[track[g].index];
        self.diag.gate_frame = Some(gate_frame.frame);
        self.diag.gate_time = Some(gate_frame.t);
        let n = self.cfg.window_size.min(track.len() - g);
        let window = gather_window(frames, imu, track[g].index, n).stage(Stage::Propagation)?;
        let nav = &track[g..g + window.len()];
        self.diag.min_features_seen = window.min_features();
        if window.min_features() < self.cfg.min_features {
            return Ok(self.imu_only(&window, nav, InitStatus::ImuOnlyFallback));
        }
        let Some(solved) = self.solve_window(&window, nav)? else {
            return Ok(self.imu_only(&window, nav, InitStatus::ImuOnlyFallback));
        };
        if self.diag.max_parallax.unwrap_or(0.0) < self.cfg.min_parallax {
            return Ok(self.imu_only(&window, nav, InitStatus::PureRotation));
        }
        let velocities = self.velocities(&window, nav, &solved)?;
        self.indicators(&window);
        self.lap(Stage::Velocity);

        let keyframes = window
            .keyframes()
            .iter()
            .zip(solved.bodies.iter().zip(&velocities))
            .map(|(kf, (pose, v))| KeyframeState::new(kf.frame, kf.t, pose, v))
            .collect();
        Ok(InitializationResult {
            schema_version: RESULT_SCHEMA_VERSION,
            status: InitStatus::Initialized,
            keyframes,
            scale: Some(solved.scale),
            selected: Some(solved.selected),
            diagnostics: std::mem::take(&mut self.diag),
            failure: None,
        })
    }

    /// Propagates the IMU from `start` to every later camera frame covered by
    /// the stream, carrying the prior normal along.
    fn track(&self, frames: &[FrameObservations], imu: &[ImuSample], start: NavState) -> Result<Vec<Tracked>> {
        let t_end = imu.last().map_or(f64::NEG_INFINITY, |s| s.t);
        let r_cw = start.rotation().compose(&self.rig.t_cb.rotation);
        let mut prior = PriorNormal {
            n: r_cw.inverse().rotate(&Vector3::z()),
            t: start.t,
        };
        let mut state = start;
        let mut out = Vec::new();
        for (index, f) in frames.iter().enumerate() {
            if f.t < start.t - 1e-9 {
                continue;
            }
            if f.t > t_end + 1e-9 {
                break;
            }
            let span = samples_between(imu, state.t, f.t)?;
            let r = integrate_camera_rotation(&span, &self.gyro_bias, &self.rig.t_cb)?;
            state = propagate(&state, &span, &self.gravity)?;
            prior = propagate_normal(&prior, &r, f.t);
            out.push(Tracked { index, state, prior });
        }
        Ok(out)
    }

    fn imu_only(&mut self, window: &KeyframeWindow, nav: &[Tracked], status: InitStatus) -> InitializationResult {
        let keyframes = window
            .keyframes()
            .iter()
            .zip(nav)
            .map(|(kf, t)| {
                let pose = t.state.pose.relabel(Frame::body(kf.frame), Frame::WORLD);
                KeyframeState::new(kf.frame, kf.t, &pose, &t.state.velocity)
            })
            .collect();
        InitializationResult {
            schema_version: RESULT_SCHEMA_VERSION,
            status,
            keyframes,
            scale: None,
            selected: None,
            diagnostics: std::mem::take(&mut self.diag),
            failure: None,
        }
    }

    /// The body never reached the preset height: check whether the latest
    /// frames show any translation at all.
    fn without_gate(
        &mut self,
        frames: &[FrameObservations],
        imu: &[ImuSample],
        track: &[Tracked],
    ) -> Result<InitializationResult> {
        if track.len() < 2 {
            return Err(Error::InsufficientData {
                needed: 2,
                got: track.len(),
            }
            .at(Stage::Propagation));
        }
        let n = self.cfg.window_size.min(track.len());
        let first = track.len() - n;
        let window = gather_window(frames, imu, track[first].index, n).stage(Stage::Propagation)?;
        let nav = &track[first..first + window.len()];
        self.diag.min_features_seen = window.min_features();
        if window.min_features() < self.cfg.min_features {
            return Ok(self.imu_only(&window, nav, InitStatus::ImuOnlyFallback));
        }
        let corr = window.correspondences(0, window.len() - 1, self.rig);
        let est = estimate(&corr, &self.cfg.ransac(), derive_seed(self.seed, 0)).stage(Stage::Estimation)?;
        let dec = decompose(&est.homography).stage(Stage::Decomposition)?;
        let parallax = if dec.pure_rotation {
            0.0
        } else {
            dec.solutions.iter().map(|s| s.t_bar.norm()).fold(0.0, f64::max)
        };
        self.diag.max_parallax = Some(parallax);
        self.lap(Stage::Decomposition);
        if parallax < self.cfg.min_parallax {
            return Ok(self.imu_only(&window, nav, InitStatus::PureRotation));
        }
        let climbed = track
            .iter()
            .map(|t| -t.state.position().z)
            .fold(f64::NEG_INFINITY, f64::max);
        Err(Error::GateNotReached(climbed).at(Stage::Propagation))
    }

    /// Per-feature weight for residuals that involve keyframes `a` and `b`.
    fn weight_for(&self, sigmas: &[BTreeMap<u64, f64>], a: usize, b: usize, id: u64) -> f64 {
        let floor = self.cfg.deviation_floor_px;
        match self.cfg.deviation {
            DeviationMode::Fixed => weight(self.cfg.fixed_deviation_px, floor),
            DeviationMode::Dynamic => {
                let s: Vec<f64> = [a, b].iter().filter_map(|k| sigmas[*k].get(&id).copied()).collect();
                if s.is_empty() {
                    return weight(self.cfg.fixed_deviation_px, floor);
                }
                let rms = (s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64).sqrt();
                weight(rms, floor)
            }
        }
    }

    /// Homography, selection, PnP and scale for every pair `(0, j)`.
    fn solve_window(&mut self, window: &KeyframeWindow, nav: &[Tracked]) -> Result<Option<Solved>> {
        let rig = self.rig;
        let cfg = self.cfg;
        let kfs = window.keyframes();
        let t_bw0 = nav[0].state.pose.relabel(Frame::body(kfs[0].frame), Frame::WORLD);
        let t_cw0 = t_bw0.compose(&rig.t_cb)?;
        let prior = nav[0].prior;
        self.diag.prior_normal = Some(prior.n.into());

        let sigmas: Vec<BTreeMap<u64, f64>> = kfs
            .iter()
            .map(|kf| {
                kf.features
                    .values()
                    .filter_map(|o| stereo_deviation(o, rig, kf.frame).ok().map(|d| (o.id, d.sigma)))
                    .collect()
            })
            .collect();
        let all: Vec<f64> = sigmas.iter().flat_map(|m| m.values().copied()).collect();
        self.diag.stereo_deviation_px = Percentiles::of(&all);

        let points0: BTreeMap<u64, Vector3<f64>> = kfs[0]
            .features
            .values()
            .filter_map(|o| {
                let tri = triangulate_stereo(o, rig, cfg.min_disparity_px).ok()?;
                tri.reliable.then(|| (o.id, t_cw0.transform_point(&tri.p_c)))
            })
            .collect();
        self.lap(Stage::Triangulation);

        let mut relative = Vec::new();
        let mut scale_pairs = Vec::new();
        let mut max_parallax: f64 = 0.0;
        for j in 1..kfs.len() {
            let corr = window.correspondences(0, j, rig);
            if corr.len() < cfg.min_features {
                return Ok(None);
            }
            let est = estimate(&corr, &cfg.ransac(), derive_seed(self.seed, 2 * j as u64)).stage(Stage::Estimation)?;
            let dec = decompose(&est.homography).stage(Stage::Decomposition)?;
            let inliers: Vec<Correspondence> = corr
                .iter()
                .zip(&est.inliers)
                .filter(|(_, &m)| m)
                .map(|(c, _)| *c)
                .collect();
            if dec.pure_rotation {
                self.diag.max_parallax = Some(0.0);
                return Ok(Some(self.no_parallax_placeholder(&t_cw0, &t_bw0, kfs.len())));
            }
            let kept = filter_positive_depth(&dec.solutions, &inliers).stage(Stage::DepthFilter)?;
            let sel = select_solution(&prior, &kept).stage(Stage::Selection)?;
            self.lap(Stage::Selection);

            let r = sel.solution.rotation;
            let t_bar = -r.inverse().rotate(&sel.solution.t_bar);
            max_parallax = max_parallax.max(t_bar.norm());
            let pts: Vec<PnpPoint> = kfs[j]
                .features
                .values()
                .filter_map(|o| {
                    let p_w = points0.get(&o.id)?;
                    Some(PnpPoint {
                        id: o.id,
                        p_w: *p_w,
                        obs: rig.normalize(&o.left),
                        weight: self.weight_for(&sigmas, 0, j, o.id),
                    })
                })
                .collect();
            let pnp = solve_pnp(&pts, &cfg.pnp(rig.f), derive_seed(self.seed, 2 * j as u64 + 1)).stage(Stage::Pnp)?;
            let t_cwj = pnp.pose.relabel(Frame::camera(kfs[j].frame), Frame::WORLD);
            let t_hat = metric_alignment(&t_cwj, &t_bw0, rig).stage(Stage::Scale)?;
            self.lap(Stage::Pnp);

            self.diag.pairs.push(PairDiagnostics {
                frame_i: kfs[0].frame,
                frame_j: kfs[j].frame,
                correspondences: corr.len(),
                homography_inliers: est.inlier_count(),
                candidates: kept.clone(),
                selected: sel.index,
                margin: sel.margin,
                pnp_points: pts.len(),
                pnp_inliers: pnp.inlier_count(),
                t_bar: t_bar.into(),
                t_hat: t_hat.into(),
            });
            scale_pairs.push((t_bar, t_hat));
            let r_att = match cfg.attitude {
                AttitudeSource::Homography => r,
                AttitudeSource::Pnp => t_cwj.rotation.inverse().compose(&t_cw0.rotation),
                AttitudeSource::Imu => {
                    let r_cwj = nav[j].state.rotation().compose(&rig.t_cb.rotation);
                    r_cwj.inverse().compose(&t_cw0.rotation)
                }
            };
            relative.push((r_att, t_bar, sel.solution));
        }
        self.diag.max_parallax = Some(max_parallax);
        if max_parallax < cfg.min_parallax {
            return Ok(Some(self.no_parallax_placeholder(&t_cw0, &t_bw0, kfs.len())));
        }
        let scale = recover_scale_stacked(&scale_pairs).stage(Stage::Scale)?;
        self.lap(Stage::Scale);

        let t_bc = rig.t_cb.inverse();
        let mut cameras = vec![t_cw0];
        let mut bodies = vec![t_bw0];
        for (kf, (r, t_bar, _)) in kfs.iter().skip(1).zip(&relative) {
            let rel = Pose::new(
                r.inverse(),
                t_bar * scale,
                Frame::camera(kf.frame),
                Frame::camera(kfs[0].frame),
            );
            let t_cwj = t_cw0.compose(&rel)?;
            bodies.push(t_cwj.compose(&t_bc)?);
            cameras.push(t_cwj);
        }
        let (_, _, widest) = relative[relative.len() - 1];
        let n_c0 = widest.normal.ok_or(Error::NoSolution).stage(Stage::Selection)?;
        Ok(Some(Solved {
            cameras,
            bodies,
            scale,
            selected: widest,
            plane_normal_w: t_cw0.rotation.rotate(&n_c0),
        }))
    }

    /// Stand-in when the window shows no translation; only the parallax
    /// diagnostic is read afterwards.
    fn no_parallax_placeholder(&self, t_cw0: &Pose, t_bw0: &Pose, n: usize) -> Solved {
        Solved {
            cameras: vec![*t_cw0; n],
            bodies: vec![*t_bw0; n],
            scale: 0.0,
            selected: HomographySolution {
                rotation: t_cw0.rotation,
                t_bar: Vector3::zeros(),
                normal: None,
            },
            plane_normal_w: Vector3::z(),
        }
    }

    /// Body velocity at every keyframe: motion-field refinement for each
    /// interval, then IMU propagation to the last keyframe.
    fn velocities(&mut self, window: &KeyframeWindow, nav: &[Tracked], solved: &Solved) -> Result<Vec<Vector3<f64>>> {
        let rig = self.rig;
        let kfs = window.keyframes();
        let n_w = solved.plane_normal_w;
        let c0 = solved.cameras[0].translation;
        let sigmas: Vec<BTreeMap<u64, f64>> = kfs
            .iter()
            .map(|kf| {
                kf.features
                    .values()
                    .filter_map(|o| stereo_deviation(o, rig, kf.frame).ok().map(|d| (o.id, d.sigma)))
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(kfs.len());
        let mut temporal = Vec::new();
        for k in 0..kfs.len() - 1 {
            let cam = &solved.cameras[k];
            let n_k = cam.rotation.inverse().rotate(&n_w);
            let d_k = solved.scale + n_w.dot(&(c0 - cam.translation));
            let features: Vec<FlowFeature> = kfs[k]
                .features
                .values()
                .filter_map(|o| {
                    let next = kfs[k + 1].features.get(&o.id)?;
                    let ray = rig.normalize_h(&o.left);
                    let den = n_k.dot(&ray);
                    (den > 1e-9 && d_k > 0.0).then(|| FlowFeature {
                        id: o.id,
                        p_k: ray * (d_k / den),
                        p_next: rig.normalize(&next.left),
                        weight: self.weight_for(&sigmas, k, k + 1, o.id),
                    })
                })
                .collect();
            let span = &window.spans()[k];
            let r_bk = solved.bodies[k].rotation;
            let from_rest = NavState::new(kfs[k].t, r_bk, Vector3::zeros(), Vector3::zeros())
                .with_biases(self.gyro_bias, self.accel_bias);
            let displacement = propagate(&from_rest, span, &self.gravity)
                .stage(Stage::Velocity)?
                .position();
            let problem = VelocityProblem {
                features,
                dt: kfs[k + 1].t - kfs[k].t,
                r_bk,
                r_bk1: solved.bodies[k + 1].rotation,
                t_cb: rig.t_cb,
                imu_displacement: displacement,
            };
            let est = refine_body_velocity(&problem, &nav[k].state.velocity, &self.cfg.gauss_newton())
                .stage(Stage::Velocity)?;
            self.diag.velocity.push(VelocityDiagnostics {
                frame: kfs[k].frame,
                features: problem.features.len(),
                iterations: est.iterations,
                cost: est.cost,
                converged: est.converged,
            });

            let omega_b = mean_gyro(span) - self.gyro_bias;
            let motion = CameraMotion {
                velocity: -camera_velocity(&est.velocity, &omega_b, &r_bk.inverse(), rig),
                omega: rig.t_cb.rotation.inverse().rotate(&omega_b),
                dt: problem.dt,
            };
            for f in &problem.features {
                let p_k: Vector2<f64> = dehomogenize(&f.p_k);
                if let Ok(d) = temporal_deviation(f.id, kfs[k].frame, &p_k, &f.p_next, &f.p_k, &motion, rig) {
                    temporal.push(d.sigma);
                }
            }
            out.push(est.velocity);
        }
        let k = kfs.len() - 2;
        let last = NavState::new(kfs[k].t, solved.bodies[k].rotation, Vector3::zeros(), out[k])
            .with_biases(self.gyro_bias, self.accel_bias);
        out.push(
            propagate(&last, &window.spans()[k], &self.gravity)
                .stage(Stage::Velocity)?
                .velocity,
        );
        self.diag.temporal_deviation_px = Percentiles::of(&temporal);
        Ok(out)
    }

    /// Planarity indicator over consecutive keyframe pairs.
    fn indicators(&mut self, window: &KeyframeWindow) {
        let mut values = Vec::new();
        for k in 0..window.len() - 1 {
            let corr = window.correspondences(k, k + 1, self.rig);
            let seed = derive_seed(self.seed, 1_000 + k as u64);
            if let Ok(est) = estimate(&corr, &self.cfg.ransac(), seed) {
                values.extend(corr.iter().map(|c| indicator(&est.homography, c)));
            }
        }
        self.diag.indicator = Percentiles::of(&values);
    }
}

fn mean_gyro(span: &[ImuSample]) -> Vector3<f64> {
    if span.is_empty() {
        return Vector3::zeros();
    }
    span.iter().map(|s| s.gyro).sum::<Vector3<f64>>() / span.len() as f64
}
