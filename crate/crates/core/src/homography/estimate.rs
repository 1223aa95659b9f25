use nalgebra::{DMatrix, Matrix3, Vector2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Correspondence, Homography};
use crate::error::{Error, Result};

/// Robust sampling parameters. Thresholds are in normalized image units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub threshold: f64,
    pub confidence: f64,
    pub max_iters: usize,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1e-3,
            confidence: 0.999,
            max_iters: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimateOutcome {
    pub homography: Homography,
    /// `inliers[k]` refers to `correspondences[k]`.
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl EstimateOutcome {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

/// Root-mean-square of the forward and backward transfer distances.
pub fn symmetric_transfer_error(h: &Matrix3<f64>, h_inv: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let fwd = transfer_distance(h, &c.p_i, &c.p_j);
    let bwd = transfer_distance(h_inv, &c.p_j, &c.p_i);
    ((fwd * fwd + bwd * bwd) * 0.5).sqrt()
}

fn transfer_distance(h: &Matrix3<f64>, from: &Vector2<f64>, to: &Vector2<f64>) -> f64 {
    let q = h * from.push(1.0);
    if q.z.abs() < f64::EPSILON {
        return f64::INFINITY;
    }
    ((q.x / q.z - to.x).powi(2) + (q.y / q.z - to.y).powi(2)).sqrt()
}

/// Estimates the homography `p̄_j ∝ H p̄_i` with a seeded four-point sampling
/// loop around the normalized DLT, followed by a least-squares refit on the
/// consensus set.
///
/// The returned matrix is scaled to unit middle singular value and signed so
/// that inliers map to positive depth ratios.
pub fn estimate(correspondences: &[Correspondence], config: &RansacConfig, seed: u64) -> Result<EstimateOutcome> {
    let n = correspondences.len();
    if n < 4 {
        return Err(Error::InsufficientData { needed: 4, got: n });
    }
    if correspondences.iter().any(|c| !c.is_finite()) {
        return Err(Error::Config("non-finite correspondence".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Vec<bool>)> = None;
    let mut required = config.max_iters;
    let mut iterations = 0;

    while iterations < required.min(config.max_iters) {
        iterations += 1;
        let idx = sample(&mut rng, n, 4);
        let subset: Vec<&Correspondence> = idx.iter().map(|k| &correspondences[k]).collect();
        if sample_is_degenerate(&subset) {
            continue;
        }
        let Some(h) = dlt(&subset) else { continue };
        let Some((count, cost, mask)) = score(&h, correspondences, config.threshold) else {
            continue;
        };
        let better = match &best {
            None => true,
            Some((bc, bcost, _)) => count > *bc || (count == *bc && cost < *bcost),
        };
        if better {
            let w = count as f64 / n as f64;
            required = adaptive_iterations(w, config.confidence);
            best = Some((count, cost, mask));
        }
        if n == 4 {
            break;
        }
    }

    let Some((count, _, mut mask)) = best else {
        return Err(Error::DegenerateEstimation);
    };
    if count < 4 {
        return Err(Error::DegenerateEstimation);
    }

    // Refit on the consensus set until it stops changing.
    let mut h = refit(correspondences, &mask).ok_or(Error::DegenerateEstimation)?;
    for _ in 0..10 {
        let Some((c, _, new_mask)) = score(&h, correspondences, config.threshold) else {
            break;
        };
        if new_mask == mask || c < 4 {
            break;
        }
        mask = new_mask;
        h = refit(correspondences, &mask).ok_or(Error::DegenerateEstimation)?;
    }

    let homography = orient(Homography::new(h)?, correspondences, &mask);
    Ok(EstimateOutcome {
        homography,
        inliers: mask,
        iterations,
    })
}

fn adaptive_iterations(inlier_ratio: f64, confidence: f64) -> usize {
    let p = inlier_ratio.powi(4);
    if p >= 1.0 - f64::EPSILON {
        return 1;
    }
    if p <= 0.0 {
        return usize::MAX;
    }
    let k = (1.0 - confidence).ln() / (1.0 - p).ln();
    if k.is_finite() {
        k.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

fn score(h: &Matrix3<f64>, correspondences: &[Correspondence], threshold: f64) -> Option<(usize, f64, Vec<bool>)> {
    let h_inv = h.try_inverse()?;
    let mut count = 0;
    let mut cost = 0.0;
    let mask = correspondences
        .iter()
        .map(|c| {
            let e = symmetric_transfer_error(h, &h_inv, c);
            let inlier = e < threshold;
            if inlier {
                count += 1;
                cost += e * e;
            } else {
                cost += threshold * threshold;
            }
            inlier
        })
        .collect();
    Some((count, cost, mask))
}

/// Rejects samples with three (nearly) collinear points in either view.
fn sample_is_degenerate(s: &[&Correspondence]) -> bool {
    let collinear = |a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>| {
        let u = b - a;
        let v = c - a;
        let area = (u.x * v.y - u.y * v.x).abs();
        area <= 1e-10 * (u.norm() * v.norm()).max(1e-300)
    };
    for (a, b, c) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        if collinear(s[a].p_i, s[b].p_i, s[c].p_i) || collinear(s[a].p_j, s[b].p_j, s[c].p_j) {
            return true;
        }
    }
    false
}

fn refit(correspondences: &[Correspondence], mask: &[bool]) -> Option<Matrix3<f64>> {
    let subset: Vec<&Correspondence> = correspondences
        .iter()
        .zip(mask)
        .filter_map(|(c, &m)| m.then_some(c))
        .collect();
    dlt(&subset)
}

/// Similarity taking the centroid to the origin with mean distance √2.
fn hartley(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let centroid = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-300 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

/// Normalized direct linear transform over ≥ 4 correspondences.
fn dlt(s: &[&Correspondence]) -> Option<Matrix3<f64>> {
    let n = s.len();
    if n < 4 {
        return None;
    }
    let t_i = hartley(s.iter().map(|c| c.p_i));
    let t_j = hartley(s.iter().map(|c| c.p_j));
    // Pad to at least 9 rows so the thin SVD still exposes the null vector.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, c) in s.iter().enumerate() {
        let p = t_i * c.p_i.push(1.0);
        let q = t_j * c.p_j.push(1.0);
        let (x, y, w) = (p.x, p.y, p.z);
        let (u, v, z) = (q.x, q.y, q.z);
        let r0 = 2 * k;
        let r1 = r0 + 1;
        a[(r0, 3)] = -z * x;
        a[(r0, 4)] = -z * y;
        a[(r0, 5)] = -z * w;
        a[(r0, 6)] = v * x;
        a[(r0, 7)] = v * y;
        a[(r0, 8)] = v * w;
        a[(r1, 0)] = z * x;
        a[(r1, 1)] = z * y;
        a[(r1, 2)] = z * w;
        a[(r1, 6)] = -u * x;
        a[(r1, 7)] = -u * y;
        a[(r1, 8)] = -u * w;
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_j_inv = t_j.try_inverse()?;
    let m = t_j_inv * hn * t_i;
    m.iter().all(|v| v.is_finite()).then_some(m)
}

/// Flips the sign so inlier points keep a positive depth ratio.
fn orient(h: Homography, correspondences: &[Correspondence], mask: &[bool]) -> Homography {
    let m = h.matrix();
    let votes: i64 = correspondences
        .iter()
        .zip(mask)
        .filter(|(_, &inl)| inl)
        .map(|(c, _)| {
            let z = (m * c.p_i.push(1.0)).z;
            if z >= 0.0 {
                1
            } else {
                -1
            }
        })
        .sum();
    if votes < 0 {
        h.negated()
    } else {
        h
    }
}
