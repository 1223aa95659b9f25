use nalgebra::{DMatrix, Matrix3, Matrix6, Vector2, Vector3, Vector6};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motion::projection_jacobian;
use crate::error::{Error, Result};
use crate::geometry::{dehomogenize, skew, Frame, Pose, Rotation};

/// One 3D-2D correspondence: a world point and its normalized observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpPoint {
    pub id: u64,
    pub p_w: Vector3<f64>,
    pub obs: Vector2<f64>,
    /// Residual weight used by the refinement.
    pub weight: f64,
}

impl PnpPoint {
    pub fn new(id: u64, p_w: Vector3<f64>, obs: Vector2<f64>) -> Self {
        Self {
            id,
            p_w,
            obs,
            weight: 1.0,
        }
    }
}

/// Sampling and refinement parameters. The threshold is in normalized image
/// units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PnpConfig {
    pub threshold: f64,
    pub confidence: f64,
    pub max_iters: usize,
    pub refine_iters: usize,
}

impl Default for PnpConfig {
    fn default() -> Self {
        Self {
            threshold: 0.03,
            confidence: 0.999,
            max_iters: 500,
            refine_iters: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PnpOutcome {
    /// `T_c^w` of the observing camera.
    pub pose: Pose,
    /// `inliers[k]` refers to `points[k]`.
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl PnpOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Camera-from-world transform `p_c = R p_w + t`.
#[derive(Debug, Clone, Copy)]
struct CamFromWorld {
    r: Rotation,
    t: Vector3<f64>,
}

impl CamFromWorld {
    fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.r.rotate(p) + self.t
    }

    fn residual(&self, pt: &PnpPoint) -> Option<Vector2<f64>> {
        let q = self.apply(&pt.p_w);
        (q.z > 0.0).then(|| pt.obs - dehomogenize(&q))
    }
}

/// Robust camera pose from 3D-2D correspondences: a minimal three-point
/// solver inside a seeded sampling loop, then weighted Gauss-Newton on the
/// reprojection error of the consensus set. Coplanar points are fine.
pub fn solve_pnp(points: &[PnpPoint], cfg: &PnpConfig, seed: u64) -> Result<PnpOutcome> {
    let n = points.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, CamFromWorld)> = None;
    let mut required = cfg.max_iters;
    let mut iterations = 0;
    while iterations < required.min(cfg.max_iters) {
        iterations += 1;
        let idx = sample(&mut rng, n, 3);
        let tri = [points[idx.index(0)], points[idx.index(1)], points[idx.index(2)]];
        for cand in p3p(&tri) {
            let (count, err) = score(&cand, points, cfg.threshold);
            let better = match &best {
                None => true,
                Some((c, e, _)) => count > *c || (count == *c && err < *e),
            };
            if better {
                best = Some((count, err, cand));
                let w = count as f64 / n as f64;
                required = adaptive_iterations(w, cfg.confidence);
            }
        }
    }
    let Some((count, _, mut pose)) = best else {
        return Err(Error::DegeneratePnp);
    };
    if count < 4 {
        return Err(Error::DegeneratePnp);
    }
    let mut inliers = inlier_mask(&pose, points, cfg.threshold);
    for _ in 0..3 {
        pose = refine(&pose, points, &inliers, cfg.refine_iters);
        let next = inlier_mask(&pose, points, cfg.threshold);
        if next == inliers {
            break;
        }
        inliers = next;
    }
    if inliers.iter().filter(|&&b| b).count() < 4 {
        return Err(Error::DegeneratePnp);
    }
    let t_wc = Pose::new(pose.r, pose.t, Frame::WORLD, Frame::CAMERA);
    Ok(PnpOutcome {
        pose: t_wc.inverse(),
        inliers,
        iterations,
    })
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p = inlier_ratio.powi(3);
    if p >= 1.0 - 1e-12 {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    k.ceil().max(1.0) as usize
}

fn score(pose: &CamFromWorld, points: &[PnpPoint], threshold: f64) -> (usize, f64) {
    let mut count = 0;
    let mut err = 0.0;
    for pt in points {
        let e = pose.residual(pt).map_or(f64::INFINITY, |r| r.norm());
        if e < threshold {
            count += 1;
            err += e;
        } else {
            err += threshold;
        }
    }
    (count, err)
}

fn inlier_mask(pose: &CamFromWorld, points: &[PnpPoint], threshold: f64) -> Vec<bool> {
    points
        .iter()
        .map(|pt| pose.residual(pt).is_some_and(|r| r.norm() < threshold))
        .collect()
}

fn weighted_cost(pose: &CamFromWorld, points: &[PnpPoint], mask: &[bool]) -> f64 {
    points
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(pt, _)| {
            pose.residual(pt)
                .map_or(f64::INFINITY, |r| pt.weight * r.norm_squared())
        })
        .sum()
}

/// Weighted Gauss-Newton on `Σ w ‖obs − π(R p + t)‖²` with the rotation
/// perturbed on the left. Steps that raise the cost are halved.
fn refine(start: &CamFromWorld, points: &[PnpPoint], mask: &[bool], max_iters: usize) -> CamFromWorld {
    let mut pose = *start;
    let mut cost = weighted_cost(&pose, points, mask);
    for _ in 0..max_iters {
        let mut a = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (pt, _) in points.iter().zip(mask).filter(|(_, &m)| m) {
            let rp = pose.r.rotate(&pt.p_w);
            let q = rp + pose.t;
            let Ok(jp) = projection_jacobian(&q) else { continue };
            let mut dq = nalgebra::Matrix3x6::<f64>::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-skew(&rp)));
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            let j = -(jp * dq);
            let r = pt.obs - dehomogenize(&q);
            a += j.transpose() * j * pt.weight;
            g += j.transpose() * r * pt.weight;
        }
        let Some(chol) = a.cholesky() else { break };
        let delta = -chol.solve(&g);
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let d = delta * step;
            let cand = CamFromWorld {
                r: Rotation::exp(&d.fixed_rows::<3>(0).into_owned()).compose(&pose.r),
                t: pose.t + d.fixed_rows::<3>(3),
            };
            let c = weighted_cost(&cand, points, mask);
            if c <= cost {
                pose = cand;
                cost = c;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted || (delta * step).norm() < 1e-12 {
            break;
        }
    }
    pose
}

/// Minimal solver: every camera pose consistent with three world points and
/// their normalized observations.
fn p3p(tri: &[PnpPoint; 3]) -> Vec<CamFromWorld> {
    let x = [tri[0].p_w, tri[1].p_w, tri[2].p_w];
    let j = [
        tri[0].obs.push(1.0).normalize(),
        tri[1].obs.push(1.0).normalize(),
        tri[2].obs.push(1.0).normalize(),
    ];
    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    if a2 < 1e-18 || b2 < 1e-18 || c2 < 1e-18 {
        return Vec::new();
    }
    let ca = j[1].dot(&j[2]);
    let cb = j[0].dot(&j[2]);
    let cg = j[0].dot(&j[1]);

    // With u = s2/s1 and v = s3/s1 (s_i the distance to point i), the law of
    // cosines gives u = N(v)/D(v) and a quartic in v.
    let bq = [1.0, -2.0 * cb, 1.0];
    let nq = poly_add(&poly_scale(&bq, a2 - c2), &[b2, 0.0, -b2]);
    let dq = [2.0 * b2 * cg, -2.0 * b2 * ca];
    let d2 = poly_mul(&dq, &dq);
    let lhs = poly_scale(
        &poly_add(
            &poly_add(&d2, &poly_mul(&nq, &nq)),
            &poly_scale(&poly_mul(&nq, &dq), -2.0 * cg),
        ),
        b2,
    );
    let quartic = poly_add(&lhs, &poly_scale(&poly_mul(&bq, &d2), -c2));

    let mut out = Vec::new();
    for v in real_roots(&quartic) {
        if v <= 0.0 {
            continue;
        }
        let d = poly_eval(&dq, v);
        if d.abs() < 1e-14 {
            continue;
        }
        let u = poly_eval(&nq, v) / d;
        let bv = poly_eval(&bq, v);
        if u <= 0.0 || bv <= 0.0 {
            continue;
        }
        let s1 = (b2 / bv).sqrt();
        let p = [j[0] * s1, j[1] * (u * s1), j[2] * (v * s1)];
        if let Some(pose) = kabsch(&x, &p) {
            out.push(pose);
        }
    }
    out
}

/// Rigid transform mapping `from` onto `to` in the least-squares sense.
fn kabsch(from: &[Vector3<f64>; 3], to: &[Vector3<f64>; 3]) -> Option<CamFromWorld> {
    let cf = (from[0] + from[1] + from[2]) / 3.0;
    let ct = (to[0] + to[1] + to[2]) / 3.0;
    let mut h = Matrix3::zeros();
    for k in 0..3 {
        h += (from[k] - cf) * (to[k] - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut d = Matrix3::identity();
    if (v_t.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v_t.transpose() * d * u.transpose();
    let rot = Rotation::from_matrix(&r);
    Some(CamFromWorld {
        t: ct - rot.rotate(&cf),
        r: rot,
    })
}

/// Coefficients are in ascending powers.
fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len().max(b.len()))
        .map(|k| a.get(k).unwrap_or(&0.0) + b.get(k).unwrap_or(&0.0))
        .collect()
}

fn poly_scale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|c| c * s).collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (k, y) in b.iter().enumerate() {
            out[i + k] += x * y;
        }
    }
    out
}

fn poly_eval(a: &[f64], x: f64) -> f64 {
    a.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Real roots from the companion-matrix eigenvalues, polished by Newton steps.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return Vec::new();
    }
    let mut c: Vec<f64> = coeffs.iter().map(|x| x / scale).collect();
    while c.len() > 1 && c[c.len() - 1].abs() < 1e-12 {
        c.pop();
    }
    let deg = c.len() - 1;
    if deg == 0 {
        return Vec::new();
    }
    let lead = c[deg];
    let mut m = DMatrix::<f64>::zeros(deg, deg);
    for k in 0..deg {
        m[(0, k)] = -c[deg - 1 - k] / lead;
    }
    for k in 1..deg {
        m[(k, k - 1)] = 1.0;
    }
    let deriv: Vec<f64> = c.iter().enumerate().skip(1).map(|(k, x)| x * k as f64).collect();
    m.complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..5 {
                let d = poly_eval(&deriv, x);
                if d == 0.0 {
                    break;
                }
                x -= poly_eval(&c, x) / d;
            }
            x
        })
        .collect()
}
