use nalgebra::{Matrix3, Vector3};

use super::{Correspondence, Homography, HomographySolution};
use crate::error::{Error, Result};
use crate::geometry::{nearest_rotation, Rotation};

/// Ratio `σ3/σ1` below which the homography is treated as rank deficient.
const RANK_EPS: f64 = 1e-10;
/// Singular-value gaps below this are snapped to zero (repeated values).
const SNAP_EPS: f64 = 1e-12;
/// Translations below this norm are reported as a pure rotation.
const PURE_ROTATION_T: f64 = 1e-6;
/// Candidates closer than this (rotation angle and vector distance) are merged.
const DEDUP_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub solutions: Vec<HomographySolution>,
    /// The motion has no observable translation; the single solution carries an
    /// indeterminate normal.
    pub pure_rotation: bool,
}

/// Analytic SVD-based decomposition of a normalized homography into up to four
/// `(R, t/d, n)` triples.
///
/// With `H = U Σ Vᵀ` scaled so `σ2 = 1`, the plane normal lies in the span of
/// `v1, v3` and the vectors `u± = (√(1−σ3²) v1 ± √(σ1²−1) v3)/√(σ1²−σ3²)` keep
/// their length under `H`. Each choice of sign fixes `(R, n)`; the remaining
/// twofold ambiguity is the joint sign flip of `t` and `n`.
pub fn decompose(h: &Homography) -> Result<Decomposition> {
    let m = h.matrix();
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateHomography);
    }
    let svd = m.svd(true, true);
    let v_t = svd.v_t.ok_or(Error::DegenerateHomography)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    if !(s[0] > 0.0) || s[2] / s[0] < RANK_EPS {
        return Err(Error::DegenerateHomography);
    }
    let hn = m / s[1];
    let mut s1 = s[0] / s[1];
    let mut s3 = s[2] / s[1];
    if s1 - 1.0 < SNAP_EPS {
        s1 = 1.0;
    }
    if 1.0 - s3 < SNAP_EPS {
        s3 = 1.0;
    }

    if s1 - s3 < SNAP_EPS {
        return Ok(pure_rotation(&hn));
    }

    let v1: Vector3<f64> = v_t.row(order[0]).transpose();
    let v2: Vector3<f64> = v_t.row(order[1]).transpose();
    let v3: Vector3<f64> = v_t.row(order[2]).transpose();

    let a = (1.0 - s3 * s3).max(0.0).sqrt();
    let b = (s1 * s1 - 1.0).max(0.0).sqrt();
    let c = (s1 * s1 - s3 * s3).sqrt();
    let u_plus = (v1 * a + v3 * b) / c;
    let u_minus = (v1 * a - v3 * b) / c;

    let mut solutions = Vec::with_capacity(4);
    for u in [u_plus, u_minus] {
        let big_u = Matrix3::from_columns(&[v2, u, v2.cross(&u)]);
        let hv2 = hn * v2;
        let hu = hn * u;
        let big_w = Matrix3::from_columns(&[hv2, hu, hv2.cross(&hu)]);
        let r = nearest_rotation(&(big_w * big_u.transpose()));
        let n = v2.cross(&u).normalize();
        let t = (hn - r) * n;
        let rotation = Rotation::from_matrix(&r);
        solutions.push(HomographySolution {
            rotation,
            t_bar: t,
            normal: Some(n),
        });
        solutions.push(HomographySolution {
            rotation,
            t_bar: -t,
            normal: Some(-n),
        });
    }

    if solutions.iter().all(|s| s.t_bar.norm() < PURE_ROTATION_T) {
        return Ok(pure_rotation(&hn));
    }

    Ok(Decomposition {
        solutions: dedup(solutions),
        pure_rotation: false,
    })
}

fn pure_rotation(hn: &Matrix3<f64>) -> Decomposition {
    let mut m = *hn;
    if m.determinant() < 0.0 {
        m = -m;
    }
    Decomposition {
        solutions: vec![HomographySolution {
            rotation: Rotation::from_matrix(&nearest_rotation(&m)),
            t_bar: Vector3::zeros(),
            normal: None,
        }],
        pure_rotation: true,
    }
}

fn dedup(solutions: Vec<HomographySolution>) -> Vec<HomographySolution> {
    let mut out: Vec<HomographySolution> = Vec::with_capacity(solutions.len());
    for s in solutions {
        let duplicate = out.iter().any(|o| {
            o.rotation.angle_to(&s.rotation) < DEDUP_EPS
                && (o.t_bar - s.t_bar).norm() < DEDUP_EPS
                && match (o.normal, s.normal) {
                    (Some(a), Some(b)) => (a - b).norm() < DEDUP_EPS,
                    _ => false,
                }
        });
        if !duplicate {
            out.push(s);
        }
    }
    out
}

/// Keeps the candidates under which every correspondence lies in front of
/// both cameras.
///
/// A point with normalized coordinate `p̄_i` on the plane has depth
/// `z_i = d / (nᵀ p̄_i)` in camera `i` and `z_j = z_i · (H p̄_i)_z` in camera `j`,
/// so with `d > 0` both depths are positive iff `nᵀ p̄_i > 0` and
/// `((R + t̄ nᵀ) p̄_i)_z > 0`.
pub fn filter_positive_depth(
    solutions: &[HomographySolution],
    correspondences: &[Correspondence],
) -> Result<Vec<HomographySolution>> {
    if solutions.is_empty() {
        return Err(Error::NoSolution);
    }
    if correspondences.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let kept: Vec<HomographySolution> = solutions
        .iter()
        .filter(|s| {
            let Some(n) = s.normal else {
                return true;
            };
            let h = s.reassemble();
            correspondences.iter().all(|c| {
                let p = c.p_i.push(1.0);
                n.dot(&p) > 0.0 && (h * p).z > 0.0
            })
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::InconsistentData);
    }
    Ok(kept)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dehomogenize;
    use crate::homography::synthesize;
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Draw {
        r: Rotation,
        t: Vector3<f64>,
        n: Vector3<f64>,
        d: f64,
    }

    fn random_draw(rng: &mut ChaCha8Rng) -> Draw {
        let r = Rotation::exp(&Vector3::new(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
        ));
        let n = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0).normalize();
        let d = rng.random_range(0.5..5.0);
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let t = dir * d * rng.random_range(0.05..2.0);
        Draw { r, t, n, d }
    }

    fn contains(sols: &[HomographySolution], draw: &Draw, tol: f64) -> bool {
        sols.iter().any(|s| {
            s.rotation.angle_to(&draw.r) < tol
                && (s.t_bar - draw.t / draw.d).norm() < tol
                && s.normal.is_some_and(|n| (n - draw.n).norm() < tol)
        })
    }

    #[test]
    fn identity_is_pure_rotation() {
        let dec = decompose(&Homography::identity()).unwrap();
        assert!(dec.pure_rotation);
        assert_eq!(dec.solutions.len(), 1);
        let s = dec.solutions[0];
        assert!(s.rotation.angle() < 1e-12);
        assert_eq!(s.t_bar, Vector3::zeros());
        assert!(s.normal.is_none());
    }

    #[test]
    fn pure_rotation_reports_indeterminate_normal() {
        let r = Rotation::from_euler_ned(0.1, 0.2, -0.4);
        let h = synthesize(&r, &Vector3::zeros(), &Vector3::z(), 2.0).unwrap();
        let dec = decompose(&h).unwrap();
        assert!(dec.pure_rotation);
        assert_eq!(dec.solutions.len(), 1);
        assert!(dec.solutions[0].t_bar.norm() < 1e-9);
        assert!(dec.solutions[0].rotation.angle_to(&r) < 1e-12);
    }

    #[test]
    fn rank_deficient_is_rejected() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0);
        let h = Homography::new(m).unwrap();
        assert!(matches!(decompose(&h), Err(Error::DegenerateHomography)));
    }

    #[test]
    fn random_round_trip_contains_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let draw = random_draw(&mut rng);
            let h = synthesize(&draw.r, &draw.t, &draw.n, draw.d).unwrap();
            let dec = decompose(&h).unwrap();
            assert!(!dec.pure_rotation);
            assert!(dec.solutions.len() <= 4);
            assert!(contains(&dec.solutions, &draw, 1e-6));
            for s in &dec.solutions {
                assert!((s.normal.unwrap().norm() - 1.0).abs() < 1e-12);
                assert!(h.aligned_distance(&s.reassemble()) < 1e-9);
            }
        }
    }

    #[test]
    fn translation_along_normal_collapses_duplicates() {
        let h = synthesize(&Rotation::identity(), &Vector3::new(0.0, 0.0, 0.3), &Vector3::z(), 1.5).unwrap();
        let dec = decompose(&h).unwrap();
        assert_eq!(dec.solutions.len(), 2);
        let draw = Draw {
            r: Rotation::identity(),
            t: Vector3::new(0.0, 0.0, 0.3),
            n: Vector3::z(),
            d: 1.5,
        };
        assert!(contains(&dec.solutions, &draw, 1e-9));
    }

    fn visible_correspondences(draw: &Draw, rng: &mut ChaCha8Rng) -> Vec<Correspondence> {
        let mut out = Vec::new();
        for k in 0..200 {
            let ray = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.5..0.5), 1.0);
            let denom = draw.n.dot(&ray);
            if denom <= 0.0 {
                continue;
            }
            let p_i = ray * (draw.d / denom);
            let p_j = draw.r.rotate(&p_i) + draw.t;
            if p_j.z <= 0.05 {
                continue;
            }
            let pj = dehomogenize(&p_j);
            if pj.x.abs() > 1.6 || pj.y.abs() > 1.0 {
                continue;
            }
            out.push(Correspondence::new(k, dehomogenize(&p_i), pj));
        }
        out
    }

    #[test]
    fn depth_filter_keeps_truth_and_two_candidates() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut checked = 0;
        while checked < 300 {
            let draw = random_draw(&mut rng);
            let c = visible_correspondences(&draw, &mut rng);
            if c.len() < 20 {
                continue;
            }
            checked += 1;
            let h = synthesize(&draw.r, &draw.t, &draw.n, draw.d).unwrap();
            let dec = decompose(&h).unwrap();
            let kept = filter_positive_depth(&dec.solutions, &c).unwrap();
            assert!(!kept.is_empty() && kept.len() <= 2);
            assert!(contains(&kept, &draw, 1e-6));
        }
    }

    #[test]
    fn generic_motion_leaves_two_candidates() {
        let draw = Draw {
            r: Rotation::from_euler_ned(0.05, -0.08, 0.2),
            t: Vector3::new(0.4, -0.2, 0.3),
            n: Vector3::new(0.1, -0.05, 1.0).normalize(),
            d: 2.0,
        };
        let c: Vec<Correspondence> = (0..25)
            .map(|k| {
                let ray = Vector3::new(0.02 * (k % 5) as f64 - 0.04, 0.02 * (k / 5) as f64 - 0.04, 1.0);
                let p_i = ray * (draw.d / draw.n.dot(&ray));
                let p_j = draw.r.rotate(&p_i) + draw.t;
                Correspondence::new(k, dehomogenize(&p_i), dehomogenize(&p_j))
            })
            .collect();
        let h = synthesize(&draw.r, &draw.t, &draw.n, draw.d).unwrap();
        let dec = decompose(&h).unwrap();
        assert_eq!(dec.solutions.len(), 4);
        let kept = filter_positive_depth(&dec.solutions, &c).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(contains(&kept, &draw, 1e-9));
    }

    #[test]
    fn antipodal_normal_is_rejected() {
        let draw = Draw {
            r: Rotation::rot_x(0.1),
            t: Vector3::new(0.2, 0.0, 0.3),
            n: Vector3::new(0.1, 0.0, 1.0).normalize(),
            d: 2.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = visible_correspondences(&draw, &mut rng);
        let flipped = HomographySolution {
            rotation: draw.r,
            t_bar: -draw.t / draw.d,
            normal: Some(-draw.n),
        };
        assert!(matches!(
            filter_positive_depth(&[flipped], &c),
            Err(Error::InconsistentData)
        ));
        let truth = HomographySolution {
            rotation: draw.r,
            t_bar: draw.t / draw.d,
            normal: Some(draw.n),
        };
        assert_eq!(filter_positive_depth(&[truth, flipped], &c).unwrap(), vec![truth]);
    }

    #[test]
    fn single_identity_solution_passes() {
        let dec = decompose(&Homography::identity()).unwrap();
        let c = vec![Correspondence::new(0, Vector2::new(0.1, 0.1), Vector2::new(0.1, 0.1))];
        assert_eq!(filter_positive_depth(&dec.solutions, &c).unwrap(), dec.solutions);
    }
}
