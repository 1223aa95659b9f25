//! Planar homographies between two calibrated views.
//!
//! A homography maps homogeneous normalized coordinates of points on a plane
//! from keyframe `i` to keyframe `j`: `p̄_j ∝ H p̄_i`. For a plane with unit
//! normal `n` (camera-`i` frame, pointing from the camera toward the plane) at
//! distance `d`, `H = R + t nᵀ / d` where `(R, t)` maps camera-`i` points into
//! camera `j`.

mod decompose;
mod estimate;

use nalgebra::{Matrix1, Matrix1x2, Matrix2, Matrix2x1, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dehomogenize, Rotation};

pub use decompose::{decompose, filter_positive_depth, Decomposition};
pub use estimate::{estimate, symmetric_transfer_error, EstimateOutcome, RansacConfig};

/// A 3×3 homography scaled so its second-largest singular value is one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    /// Wraps `m`, rescaling it so that its middle singular value is one. The
    /// sign of `m` is preserved.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        if !(sv[1] > 0.0) || !sv[1].is_finite() {
            return Err(Error::DegenerateHomography);
        }
        Ok(Self(m / sv[1]))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Upper-left 2×2 block.
    pub fn h1(&self) -> Matrix2<f64> {
        self.0.fixed_view::<2, 2>(0, 0).into_owned()
    }

    /// Upper-right 2×1 block.
    pub fn h2(&self) -> Matrix2x1<f64> {
        self.0.fixed_view::<2, 1>(0, 2).into_owned()
    }

    /// Lower-left 1×2 block.
    pub fn h3(&self) -> Matrix1x2<f64> {
        self.0.fixed_view::<1, 2>(2, 0).into_owned()
    }

    /// Lower-right scalar.
    pub fn h4(&self) -> f64 {
        self.0[(2, 2)]
    }

    /// Rebuilds the matrix from its four blocks.
    pub fn from_blocks(h1: Matrix2<f64>, h2: Matrix2x1<f64>, h3: Matrix1x2<f64>, h4: f64) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        m.fixed_view_mut::<2, 2>(0, 0).copy_from(&h1);
        m.fixed_view_mut::<2, 1>(0, 2).copy_from(&h2);
        m.fixed_view_mut::<1, 2>(2, 0).copy_from(&h3);
        m.fixed_view_mut::<1, 1>(2, 2).copy_from(&Matrix1::new(h4));
        m
    }

    /// Maps a normalized point of view `i` into view `j`.
    pub fn transfer(&self, p_i: &Vector2<f64>) -> Option<Vector2<f64>> {
        let q = self.0 * p_i.push(1.0);
        (q.z != 0.0).then(|| dehomogenize(&q))
    }

    /// Inverse homography, normalized the same way.
    pub fn inverse(&self) -> Result<Self> {
        let inv = self.0.try_inverse().ok_or(Error::DegenerateHomography)?;
        Self::new(inv)
    }

    pub fn negated(&self) -> Self {
        Self(-self.0)
    }

    /// Frobenius distance after aligning the overall scale (and sign) of
    /// `other` onto `self`.
    pub fn aligned_distance(&self, other: &Matrix3<f64>) -> f64 {
        aligned_frobenius(&self.0, other)
    }
}

/// `min_λ ‖a − λ b‖_F`.
pub fn aligned_frobenius(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let bb = b.norm_squared();
    if bb == 0.0 {
        return a.norm();
    }
    let lambda = a.dot(b) / bb;
    (a - b * lambda).norm()
}

/// One candidate from decomposing a homography.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomographySolution {
    /// Camera `i` → camera `j` rotation.
    pub rotation: Rotation,
    /// Translation over plane distance, `t / d`.
    pub t_bar: Vector3<f64>,
    /// Unit plane normal in camera `i`. `None` when the motion is a pure
    /// rotation and the plane is unobservable.
    pub normal: Option<Vector3<f64>>,
}

impl HomographySolution {
    pub fn is_pure_rotation(&self) -> bool {
        self.normal.is_none()
    }

    /// `R + t̄ nᵀ`; equals the normalized homography for a valid solution.
    pub fn reassemble(&self) -> Matrix3<f64> {
        let r = self.rotation.matrix();
        match self.normal {
            Some(n) => r + self.t_bar * n.transpose(),
            None => r,
        }
    }
}

/// A normalized-coordinate match between keyframes `i` and `j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub id: u64,
    pub p_i: Vector2<f64>,
    pub p_j: Vector2<f64>,
}

impl Correspondence {
    pub fn new(id: u64, p_i: Vector2<f64>, p_j: Vector2<f64>) -> Self {
        Self { id, p_i, p_j }
    }

    pub fn is_finite(&self) -> bool {
        self.p_i.iter().chain(self.p_j.iter()).all(|v| v.is_finite())
    }
}

/// Homography induced by the plane `(n, d)` under the motion `(R, t)`.
pub fn synthesize(rotation: &Rotation, t: &Vector3<f64>, normal: &Vector3<f64>, d: f64) -> Result<Homography> {
    if !(d > 0.0) {
        return Err(Error::InvalidPlane(d));
    }
    let n = normal.normalize();
    Homography::new(rotation.matrix() + t * n.transpose() / d)
}

/// Planarity indicator: distance in the normalized image plane between the
/// observed `p_j` and the transfer of `p_i`.
///
/// Returns `f64::INFINITY` when `H p̄_i` lies on the line at infinity.
pub fn indicator(h: &Homography, c: &Correspondence) -> f64 {
    match h.transfer(&c.p_i) {
        Some(q) => (c.p_j - q).norm(),
        None => f64::INFINITY,
    }
}
