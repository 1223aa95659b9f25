use nalgebra::{Matrix2x3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CameraRig, FrameKind, Pose, Rotation};
use crate::homography::{Homography, HomographySolution};
use crate::imu::PriorNormal;
use crate::tracks::StereoObservation;

/// Outcome of choosing among the depth-filtered candidates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub solution: HomographySolution,
    /// Index into the candidate list.
    pub index: usize,
    /// Gap between the runner-up's and the winner's distance to the prior;
    /// zero with a single candidate.
    pub margin: f64,
}

/// Picks the candidate whose normal is closest to the prior. Ties go to the
/// earlier candidate. A candidate without a normal is never closer than one
/// with a normal.
pub fn select_solution(prior: &PriorNormal, candidates: &[HomographySolution]) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::NoSolution);
    }
    let dist: Vec<f64> = candidates
        .iter()
        .map(|c| c.normal.map_or(f64::INFINITY, |n| (prior.n - n).norm()))
        .collect();
    let mut best = 0;
    for (k, d) in dist.iter().enumerate().skip(1) {
        if *d < dist[best] {
            best = k;
        }
    }
    let runner_up = dist
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != best)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let margin = if candidates.len() == 1 || !runner_up.is_finite() {
        0.0
    } else {
        runner_up - dist[best]
    };
    Ok(Selection {
        solution: candidates[best],
        index: best,
        margin,
    })
}

/// A stereo point in the left-camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation {
    pub p_c: Vector3<f64>,
    pub disparity: f64,
    /// False when the disparity is below the configured minimum.
    pub reliable: bool,
}

/// Depth from disparity, `z = f b / (u_L - u_R)`, and `p_c = z [x̄_L, ȳ_L, 1]`.
pub fn triangulate_stereo(obs: &StereoObservation, rig: &CameraRig, min_disparity: f64) -> Result<Triangulation> {
    let disparity = obs.disparity();
    if !(disparity > 0.0) {
        return Err(Error::InvalidDisparity(disparity));
    }
    let z = rig.f * rig.baseline / disparity;
    Ok(Triangulation {
        p_c: rig.normalize_h(&obs.left) * z,
        disparity,
        reliable: disparity >= min_disparity,
    })
}

const MIN_T_BAR: f64 = 1e-6;

/// Least-squares scale `s = t̄ᵀ t̂ / t̄ᵀ t̄`.
pub fn recover_scale(t_bar: &Vector3<f64>, t_hat: &Vector3<f64>) -> Result<f64> {
    recover_scale_stacked(&[(*t_bar, *t_hat)])
}

/// Least-squares scale shared by several `(t̄, t̂)` pairs.
pub fn recover_scale_stacked(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> Result<f64> {
    let den: f64 = pairs.iter().map(|(b, _)| b.norm_squared()).sum();
    if den.sqrt() <= MIN_T_BAR {
        return Err(Error::DegenerateTranslation(den.sqrt()));
    }
    let num: f64 = pairs.iter().map(|(b, h)| b.dot(h)).sum();
    let s = num / den;
    if !(s > 0.0) {
        return Err(Error::BackwardsScale(s));
    }
    Ok(s)
}

/// Metric position of camera `j` in the reference camera frame:
/// `(R_b^w R_c^b)ᵀ (t_{c_j}^w − t_b^w) − (R_c^b)ᵀ t_c^b`, where `T_b^w` is the
/// body pose at the reference keyframe.
pub fn metric_alignment(t_pnp: &Pose, t_body: &Pose, rig: &CameraRig) -> Result<Vector3<f64>> {
    check_kind(t_pnp, FrameKind::Camera, FrameKind::World)?;
    check_kind(t_body, FrameKind::Body, FrameKind::World)?;
    let r_cw = t_body.rotation.compose(&rig.t_cb.rotation);
    Ok(r_cw.inverse().rotate(&(t_pnp.translation - t_body.translation))
        - rig.t_cb.rotation.inverse().rotate(&rig.t_cb.translation))
}

fn check_kind(p: &Pose, of: FrameKind, in_frame: FrameKind) -> Result<()> {
    if p.of.kind != of || p.in_frame.kind != in_frame {
        let expected = crate::geometry::Frame { kind: of, index: None };
        return Err(Error::LabeledFrame { expected, found: p.of });
    }
    Ok(())
}

const HORIZON_EPS: f64 = 1e-9;

/// Image-plane velocity in view `j` of a point moving with `v_i` in view `i`,
/// from differentiating `p_j = (h1 p_i + h2) / (h3 p_i + h4)`.
pub fn predicted_normalized_velocity(h: &Homography, p_i: &Vector2<f64>, v_i: &Vector2<f64>) -> Result<Vector2<f64>> {
    let den = (h.h3() * p_i)[0] + h.h4();
    if den.abs() < HORIZON_EPS {
        return Err(Error::HorizonSingularity(den));
    }
    let num = h.h1() * p_i + h.h2();
    let dden = (h.h3() * v_i)[0];
    Ok((h.h1() * v_i * den - num * dden) / (den * den))
}

/// `∂(x/z, y/z)/∂p` at `p`.
pub fn projection_jacobian(p: &Vector3<f64>) -> Result<Matrix2x3<f64>> {
    if p.z.abs() < HORIZON_EPS {
        return Err(Error::ZeroDepth(p.z));
    }
    let iz = 1.0 / p.z;
    Ok(Matrix2x3::new(iz, 0.0, -p.x * iz * iz, 0.0, iz, -p.y * iz * iz))
}

/// Normalized image velocity of a point at `p_c` moving with `v_c`.
pub fn feature_normalized_velocity(p_c: &Vector3<f64>, v_c: &Vector3<f64>) -> Result<Vector2<f64>> {
    Ok(projection_jacobian(p_c)? * v_c)
}

/// Apparent velocity of static scene points in the left-camera frame:
/// `v_c = −R_b^c R_w^b (v_b^w + R_b^w (ω_b × t_c^b))`. `r_wb` is `R_w^b`.
pub fn camera_velocity(v_b_w: &Vector3<f64>, omega_b: &Vector3<f64>, r_wb: &Rotation, rig: &CameraRig) -> Vector3<f64> {
    let r_bw = r_wb.inverse();
    let v_c_w = v_b_w + r_bw.rotate(&omega_b.cross(&rig.t_cb.translation));
    -rig.t_cb.rotation.inverse().rotate(&r_wb.rotate(&v_c_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Frame;
    use crate::homography::synthesize;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn candidate(n: [f64; 3]) -> HomographySolution {
        HomographySolution {
            rotation: Rotation::identity(),
            t_bar: Vector3::new(0.0, 0.0, -0.1),
            normal: Some(Vector3::from(n).normalize()),
        }
    }

    #[test]
    fn selects_the_closer_normal() {
        let prior = PriorNormal::level(0.0);
        let a = candidate([0.0, 0.0, 1.0]);
        let b = candidate([1.0, 0.0, 0.0]);
        let s = select_solution(&prior, &[a, b]).unwrap();
        assert_eq!(s.index, 0);
        assert_relative_eq!(s.margin, 2f64.sqrt(), epsilon = 1e-12);
        assert_eq!(select_solution(&prior, &[b, a]).unwrap().index, 1);
    }

    #[test]
    fn ties_go_to_the_first_candidate() {
        let prior = PriorNormal::level(0.0);
        let a = candidate([1.0, 0.0, 1.0]);
        let b = candidate([-1.0, 0.0, 1.0]);
        let s = select_solution(&prior, &[a, b]).unwrap();
        assert_eq!(s.index, 0);
        assert_eq!(s.margin, 0.0);
    }

    #[test]
    fn single_and_empty_candidate_lists() {
        let prior = PriorNormal::level(0.0);
        let a = candidate([1.0, 0.0, 0.0]);
        let s = select_solution(&prior, &[a]).unwrap();
        assert_eq!((s.index, s.margin), (0, 0.0));
        assert!(matches!(select_solution(&prior, &[]), Err(Error::NoSolution)));
    }

    #[test]
    fn selection_ignores_distance_scaling() {
        // The argmin is unchanged when every distance is multiplied by the same
        // positive constant, which scaling prior and candidates together does.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let mut v = || Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0).normalize();
            let (p, a, b) = (v(), v(), v());
            let pick = |k: f64| {
                let da = (p * k - a * k).norm();
                let db = (p * k - b * k).norm();
                if da <= db {
                    0
                } else {
                    1
                }
            };
            let prior = PriorNormal { n: p, t: 0.0 };
            let s = select_solution(&prior, &[candidate(a.into()), candidate(b.into())]).unwrap();
            assert_eq!(s.index, pick(1.0));
            assert_eq!(pick(1.0), pick(7.5));
        }
    }

    #[test]
    fn triangulation_examples() {
        let rig = CameraRig::reference();
        let left = rig.denormalize(&Vector2::new(0.0, 0.0));
        let obs = StereoObservation::new(1, left, left - Vector2::new(20.0, 0.0));
        let t = triangulate_stereo(&obs, &rig, 1.0).unwrap();
        assert_relative_eq!(t.p_c, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-12);
        assert!(t.reliable);
        assert!(!triangulate_stereo(&obs, &rig, 25.0).unwrap().reliable);
        let flat = StereoObservation::new(1, left, left);
        assert!(matches!(
            triangulate_stereo(&flat, &rig, 1.0),
            Err(Error::InvalidDisparity(_))
        ));
    }

    #[test]
    fn triangulation_recovers_projected_points() {
        let rig = CameraRig::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0.5..5.0),
            );
            let obs = StereoObservation::new(0, rig.project(&p).unwrap(), rig.project_right(&p).unwrap());
            assert!((triangulate_stereo(&obs, &rig, 0.0).unwrap().p_c - p).norm() < 1e-9);
        }
    }

    #[test]
    fn scale_closed_form() {
        assert_relative_eq!(recover_scale(&Vector3::z(), &Vector3::new(0.0, 0.0, 2.0)).unwrap(), 2.0);
        assert_relative_eq!(recover_scale(&Vector3::x(), &Vector3::new(2.0, 0.1, 0.0)).unwrap(), 2.0);
        assert!(matches!(
            recover_scale(&Vector3::zeros(), &Vector3::x()),
            Err(Error::DegenerateTranslation(_))
        ));
        assert!(matches!(
            recover_scale(&Vector3::x(), &-Vector3::x()),
            Err(Error::BackwardsScale(_))
        ));
    }

    #[test]
    fn scale_satisfies_the_normal_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let mut v = || {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            };
            let t_bar = v();
            let t_hat = t_bar * 1.7 + v() * 0.1;
            if let Ok(s) = recover_scale(&t_bar, &t_hat) {
                assert!(t_bar.dot(&(t_bar * s - t_hat)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn alignment_collapses_with_identity_extrinsics() {
        let mut rig = CameraRig::reference();
        rig.t_cb = Pose::identity(Frame::CAMERA, Frame::BODY);
        let cam = Pose::new(
            Rotation::identity(),
            Vector3::new(0.0, 0.0, 2.0),
            Frame::camera(3),
            Frame::WORLD,
        );
        let body = Pose::identity(Frame::body(0), Frame::WORLD);
        assert_relative_eq!(
            metric_alignment(&cam, &body, &rig).unwrap(),
            Vector3::new(0.0, 0.0, 2.0)
        );
        assert!(matches!(
            metric_alignment(&body, &cam, &rig),
            Err(Error::LabeledFrame { .. })
        ));
    }

    #[test]
    fn alignment_matches_the_pose_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let mut rot = || {
                Rotation::exp(&Vector3::new(
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-2.0..2.0),
                ))
            };
            let (r1, r2, r3) = (rot(), rot(), rot());
            let mut v = || {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-3.0..3.0),
                )
            };
            let mut rig = CameraRig::reference();
            rig.t_cb = Pose::new(r1, v(), Frame::CAMERA, Frame::BODY);
            let body = Pose::new(r2, v(), Frame::body(0), Frame::WORLD);
            let cam = Pose::new(r3, v(), Frame::camera(4), Frame::WORLD);
            let chain = body.compose(&rig.t_cb).unwrap().inverse().compose(&cam).unwrap();
            let direct = metric_alignment(&cam, &body, &rig).unwrap();
            assert!((chain.translation - direct).norm() < 1e-12);
        }
    }

    fn random_h(rng: &mut ChaCha8Rng) -> Homography {
        let r = Rotation::exp(&Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ));
        let t = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let n = Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 1.0);
        synthesize(&r, &t, &n, rng.random_range(1.0..4.0)).unwrap()
    }

    #[test]
    fn homography_velocity_examples() {
        let v = Vector2::new(0.3, -0.7);
        let p = Vector2::new(0.1, 0.2);
        assert_relative_eq!(
            predicted_normalized_velocity(&Homography::identity(), &p, &v).unwrap(),
            v,
            epsilon = 1e-15
        );
        // Stored as diag(1, 1, 0.5); the map is invariant to the overall scale.
        let scale = Homography::new(Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0))).unwrap();
        let out = predicted_normalized_velocity(&scale, &p, &v).unwrap();
        assert_relative_eq!(out, v * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn homography_velocity_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eps = 1e-6;
        for _ in 0..200 {
            let h = random_h(&mut rng);
            let p = Vector2::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let v = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let fd = (h.transfer(&(p + v * eps)).unwrap() - h.transfer(&(p - v * eps)).unwrap()) / (2.0 * eps);
            let an = predicted_normalized_velocity(&h, &p, &v).unwrap();
            assert!((fd - an).norm() < 1e-6, "{fd} vs {an}");
        }
    }

    #[test]
    fn horizon_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        let h = Homography::new(m).unwrap();
        let out = predicted_normalized_velocity(&h, &Vector2::new(0.0, 0.3), &Vector2::new(1.0, 0.0));
        assert!(matches!(out, Err(Error::HorizonSingularity(_))));
    }

    #[test]
    fn feature_velocity_examples() {
        let p = Vector3::new(1.0, 2.0, 2.0);
        assert_relative_eq!(
            feature_normalized_velocity(&p, &Vector3::z()).unwrap(),
            Vector2::new(-0.25, -0.5)
        );
        assert_eq!(
            feature_normalized_velocity(&p, &Vector3::zeros()).unwrap(),
            Vector2::zeros()
        );
        assert!(matches!(
            feature_normalized_velocity(&Vector3::new(1.0, 0.0, 0.0), &Vector3::z()),
            Err(Error::ZeroDepth(_))
        ));
    }

    #[test]
    fn feature_velocity_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = 1e-6;
        let norm = |p: Vector3<f64>| Vector2::new(p.x / p.z, p.y / p.z);
        for _ in 0..200 {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..5.0),
            );
            let v = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let fd = (norm(p + v * eps) - norm(p - v * eps)) / (2.0 * eps);
            assert!((fd - feature_normalized_velocity(&p, &v).unwrap()).norm() < 1e-6);
        }
    }

    #[test]
    fn camera_velocity_examples() {
        let mut rig = CameraRig::reference();
        rig.t_cb = Pose::identity(Frame::CAMERA, Frame::BODY);
        let v = camera_velocity(
            &Vector3::new(0.0, 0.0, 1.5),
            &Vector3::zeros(),
            &Rotation::identity(),
            &rig,
        );
        assert_relative_eq!(v, Vector3::new(0.0, 0.0, -1.5));
        rig.t_cb.translation = Vector3::x();
        let v = camera_velocity(&Vector3::zeros(), &Vector3::z(), &Rotation::identity(), &rig);
        // Lever term ω × t = [0, 1, 0], then negated.
        assert_relative_eq!(v, Vector3::new(0.0, -1.0, 0.0));
    }
}
