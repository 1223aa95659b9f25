use nalgebra::{DMatrix, DVector, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::motion::projection_jacobian;
use crate::error::{Error, Result};
use crate::geometry::{dehomogenize, Pose, Rotation};

/// A feature tracked from keyframe `k` to `k + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowFeature {
    pub id: u64,
    /// Position in the left camera at `k`, m.
    pub p_k: Vector3<f64>,
    /// Measured normalized coordinate at `k + 1`.
    pub p_next: Vector2<f64>,
    pub weight: f64,
}

impl FlowFeature {
    /// Measured normalized velocity, the forward difference over `dt`.
    pub fn measured_velocity(&self, dt: f64) -> Vector2<f64> {
        (self.p_next - dehomogenize(&self.p_k)) / dt
    }
}

/// Motion-field model of one keyframe interval with the body velocity at
/// `k` as the unknown.
///
/// The body moves by `v dt + D` over the interval, where `D` is the
/// displacement the IMU accelerations produce from rest. A static feature at
/// `p_k` in camera `k` then projects to
/// `π(R_{c,k+1}ᵀ (R_{c,k} p_k − v dt − D − R_{b,k+1} t + R_{b,k} t))`
/// in camera `k + 1`, with `t` the camera lever arm. Residuals compare
/// measured and predicted normalized velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityProblem {
    pub features: Vec<FlowFeature>,
    pub dt: f64,
    /// `R_b^w` at `k`.
    pub r_bk: Rotation,
    /// `R_b^w` at `k + 1`.
    pub r_bk1: Rotation,
    /// `T_c^b`.
    pub t_cb: Pose,
    /// Body displacement over the interval from the IMU alone, world frame.
    pub imu_displacement: Vector3<f64>,
}

impl VelocityProblem {
    fn r_c1_t(&self) -> Matrix3<f64> {
        self.r_bk1.compose(&self.t_cb.rotation).matrix().transpose()
    }

    fn offsets(&self) -> Vec<Vector3<f64>> {
        let r_ck = self.r_bk.compose(&self.t_cb.rotation);
        let lever = self.r_bk.rotate(&self.t_cb.translation) - self.r_bk1.rotate(&self.t_cb.translation);
        let m = self.r_c1_t();
        self.features
            .iter()
            .map(|f| m * (r_ck.rotate(&f.p_k) - self.imu_displacement + lever))
            .collect()
    }

    fn points(&self, v: &Vector3<f64>) -> Vec<Vector3<f64>> {
        let shift = self.r_c1_t() * v * self.dt;
        self.offsets().into_iter().map(|a| a - shift).collect()
    }

    /// Predicted normalized coordinates at `k + 1`.
    pub fn predicted(&self, v: &Vector3<f64>) -> Result<Vec<Vector2<f64>>> {
        self.points(v)
            .iter()
            .map(|q| {
                if q.z <= 0.0 {
                    Err(Error::ZeroDepth(q.z))
                } else {
                    Ok(dehomogenize(q))
                }
            })
            .collect()
    }

    /// Stacked weighted residuals `√w (v̄_measured − v̄_predicted)`.
    pub fn residuals(&self, v: &Vector3<f64>) -> Result<DVector<f64>> {
        let pred = self.predicted(v)?;
        let mut r = DVector::zeros(2 * self.features.len());
        for (k, (f, p)) in self.features.iter().zip(&pred).enumerate() {
            let e = (f.p_next - p) * (f.weight.sqrt() / self.dt);
            r[2 * k] = e.x;
            r[2 * k + 1] = e.y;
        }
        Ok(r)
    }

    /// Analytic Jacobian of [`Self::residuals`] with respect to `v`.
    pub fn jacobian(&self, v: &Vector3<f64>) -> Result<DMatrix<f64>> {
        let m = self.r_c1_t();
        let mut j = DMatrix::zeros(2 * self.features.len(), 3);
        for (k, (f, q)) in self.features.iter().zip(self.points(v)).enumerate() {
            let block = projection_jacobian(&q)? * m * f.weight.sqrt();
            j.view_mut((2 * k, 0), (2, 3)).copy_from(&block);
        }
        Ok(j)
    }

    pub fn cost(&self, v: &Vector3<f64>) -> Result<f64> {
        Ok(self.residuals(v)?.norm_squared())
    }
}

/// Gauss-Newton stopping rules.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussNewtonConfig {
    pub max_iters: usize,
    pub step_tolerance: f64,
    pub relative_decrease: f64,
}

impl Default for GaussNewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 25,
            step_tolerance: 1e-10,
            relative_decrease: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityEstimate {
    pub velocity: Vector3<f64>,
    pub iterations: usize,
    pub cost: f64,
    /// Cost before the first and after every accepted iteration.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

/// Minimizes the motion-field residuals over the body velocity by undamped
/// Gauss-Newton. A step that would raise the cost is halved until it does
/// not. Hitting `max_iters` returns the best iterate with `converged = false`.
pub fn refine_body_velocity(
    problem: &VelocityProblem,
    v_init: &Vector3<f64>,
    cfg: &GaussNewtonConfig,
) -> Result<VelocityEstimate> {
    if problem.features.len() < 3 {
        return Err(Error::InsufficientData {
            needed: 3,
            got: problem.features.len(),
        });
    }
    if !(problem.dt > 0.0) {
        return Err(Error::Time(problem.dt));
    }
    let mut v = *v_init;
    let mut cost = problem.cost(&v)?;
    let mut history = vec![cost];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        iterations += 1;
        let j = problem.jacobian(&v)?;
        let r = problem.residuals(&v)?;
        let jtj = j.transpose() * &j;
        let sv = jtj.singular_values();
        let smax = sv.max();
        let rank = sv.iter().filter(|s| **s > smax * 1e-12).count();
        if smax <= 0.0 || rank < 3 {
            return Err(Error::UnobservableVelocity(if smax <= 0.0 { 0 } else { rank }));
        }
        let rhs = j.transpose() * &r;
        let Some(chol) = jtj.cholesky() else {
            return Err(Error::UnobservableVelocity(rank));
        };
        // r = m − π(q(v)) so J = ∂r/∂v already carries the sign: δ = −(JᵀJ)⁻¹Jᵀr.
        let delta: Vector3<f64> = -Vector3::from_iterator(chol.solve(&rhs).iter().copied());
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..30 {
            let cand = v + delta * step;
            if let Ok(c) = problem.cost(&cand) {
                if c <= cost {
                    next = Some((cand, c));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((cand, c)) = next else {
            converged = true;
            break;
        };
        let decrease = cost - c;
        v = cand;
        cost = c;
        history.push(cost);
        if (delta * step).norm() < cfg.step_tolerance || decrease <= cfg.relative_decrease * cost.max(f64::MIN_POSITIVE)
        {
            converged = true;
            break;
        }
    }
    Ok(VelocityEstimate {
        velocity: v,
        iterations,
        cost,
        cost_history: history,
        converged,
    })
}
