//! Minimally parameterized rigid transforms.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::plane::PlaneH;
use super::so3::{rotation_exp, rotation_log};
use super::GeomError;

/// A rigid transform in minimal coordinates: axis-angle w plus translation t,
/// mapping source-frame coordinates into the target frame:
/// x_target = Exp(w) x_source + t.
///
/// Frames are conventionally written in variable names at the use sites
/// (`t_c1_w` maps world into camera 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransformMin {
    /// Axis-angle rotation (rad); ‖w‖ < π.
    pub w: Vector3<f64>,
    /// Translation (mm).
    pub t: Vector3<f64>,
}

impl RigidTransformMin {
    /// The identity transform.
    pub fn identity() -> Self {
        Self { w: Vector3::zeros(), t: Vector3::zeros() }
    }

    /// Builds from a rotation matrix and translation.
    pub fn from_rt(r: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self, GeomError> {
        Ok(Self { w: rotation_log(r)?, t })
    }

    /// The rotation matrix Exp(w).
    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_exp(&self.w)
    }

    /// Maps a source-frame point into the target frame.
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation() * p.coords + self.t)
    }

    /// Maps a target-frame point back into the source frame.
    pub fn inverse_transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation().transpose() * (p.coords - self.t))
    }

    /// The inverse transform. Exact: Log(Rᵀ) = −w on the principal branch.
    pub fn inverse(&self) -> Self {
        Self { w: -self.w, t: -(rotation_exp(&-self.w) * self.t) }
    }

    /// Composition: `self ∘ other` first applies `other`, then `self`.
    ///
    /// Errors if the composed rotation lands on the Log branch cut.
    pub fn compose(&self, other: &Self) -> Result<Self, GeomError> {
        let r = self.rotation() * other.rotation();
        let t = self.rotation() * other.t + self.t;
        Self::from_rt(&r, t)
    }

    /// Re-expresses a source-frame plane in the target frame:
    /// n ↦ R n, d ↦ d − tᵀ(R n).
    pub fn transform_plane(&self, plane: &PlaneH) -> PlaneH {
        let n = self.rotation() * plane.n;
        PlaneH { n, d: plane.d - self.t.dot(&n) }
    }

    /// Re-expresses a target-frame plane in the source frame:
    /// n ↦ Rᵀ n, d ↦ d + tᵀn.
    pub fn inverse_transform_plane(&self, plane: &PlaneH) -> PlaneH {
        PlaneH { n: self.rotation().transpose() * plane.n, d: plane.d + self.t.dot(&plane.n) }
    }
}
