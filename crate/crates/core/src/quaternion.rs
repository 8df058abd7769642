//! Hamilton quaternions (`w + xi + yj + zk`) used as rotation carriers.
//!
//! Composition follows the usual convention: `(a * b).rotate(v) ==
//! a.rotate(b.rotate(v))`.

use std::ops::{Mul, Neg};

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::Real;

/// Norm below which a quaternion cannot be normalized.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[T; 4]", into = "[T; 4]")]
pub struct Quaternion<T: Real> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> From<[T; 4]> for Quaternion<T> {
    fn from(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl<T: Real> From<Quaternion<T>> for [T; 4] {
    fn from(q: Quaternion<T>) -> Self {
        q.to_array()
    }
}

impl<T: Real> Quaternion<T> {
    pub const fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    /// Rotation of `angle` radians about `axis`. The axis does not need to be
    /// unit length; a zero axis yields the identity.
    pub fn from_axis_angle(axis: Vec3<T>, angle: T) -> Self {
        let n = linalg::norm(axis);
        if n == T::zero() {
            return Self::identity();
        }
        let half = angle * T::lit(0.5);
        let s = half.sin() / n;
        Self::new(half.cos(), axis[0] * s, axis[1] * s, axis[2] * s)
    }

    /// Exponential map of a rotation vector (axis scaled by angle).
    pub fn from_scaled_axis(v: Vec3<T>) -> Self {
        let angle = linalg::norm(v);
        if angle < T::lit(1e-6) {
            // second-order series, then normalize
            let q = Self::new(
                T::one() - angle * angle / T::lit(8.0),
                v[0] * T::lit(0.5),
                v[1] * T::lit(0.5),
                v[2] * T::lit(0.5),
            );
            return q.scaled(T::one() / q.norm());
        }
        Self::from_axis_angle(v, angle)
    }

    pub fn rx(angle: T) -> Self {
        Self::from_axis_angle([T::one(), T::zero(), T::zero()], angle)
    }

    pub fn ry(angle: T) -> Self {
        Self::from_axis_angle([T::zero(), T::one(), T::zero()], angle)
    }

    pub fn rz(angle: T) -> Self {
        Self::from_axis_angle([T::zero(), T::zero(), T::one()], angle)
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn vector(self) -> Vec3<T> {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, other: Self) -> T {
        self.w * other.w + self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_squared(self) -> T {
        self.dot(self)
    }

    pub fn norm(self) -> T {
        self.norm_squared().sqrt()
    }

    pub fn scaled(self, s: T) -> Self {
        Self::new(self.w * s, self.x * s, self.y * s, self.z * s)
    }

    pub fn conjugate(self) -> Self {
        Self::new(self.w, -self.x, -self.y, -self.z)
    }

    /// Inverse rotation. Assumes unit norm.
    pub fn inverse(self) -> Self {
        self.conjugate()
    }

    /// Scales to unit norm, preserving direction.
    pub fn normalize(self) -> Result<Self, GeometryError> {
        let n = self.norm();
        if !(n > T::lit(DEGENERATE_NORM)) {
            return Err(GeometryError::DegenerateQuaternion(n.to_f64_lossy()));
        }
        Ok(self.scaled(T::one() / n))
    }

    /// Picks the sign with `w >= 0`. Both signs describe the same rotation.
    pub fn canonicalize_hemisphere(self) -> Self {
        if self.w < T::zero() {
            -self
        } else {
            self
        }
    }

    pub fn is_unit(self, tol: T) -> bool {
        (self.norm_squared() - T::one()).abs() <= tol
    }

    /// Rotation angle in radians, in `[0, pi]`.
    ///
    /// Uses `atan2` instead of `acos(|w|)`, which loses about half the
    /// significant digits for small angles.
    pub fn angle(self) -> T {
        let v = linalg::norm(self.vector());
        T::lit(2.0) * v.atan2(self.w.abs())
    }

    pub fn rotate(self, v: Vec3<T>) -> Vec3<T> {
        let u = self.vector();
        let two = T::lit(2.0);
        let t = linalg::scale(linalg::cross(u, v), two);
        linalg::add(linalg::add(v, linalg::scale(t, self.w)), linalg::cross(u, t))
    }

    pub fn to_rotation_matrix(self) -> Mat3<T> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        let one = T::one();
        let two = T::lit(2.0);
        [
            [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
            [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
            [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
        ]
    }

    pub fn cast<U: Real>(self) -> Quaternion<U> {
        Quaternion::new(
            U::lit(self.w.to_f64_lossy()),
            U::lit(self.x.to_f64_lossy()),
            U::lit(self.y.to_f64_lossy()),
            U::lit(self.z.to_f64_lossy()),
        )
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(self, other: Self) -> T {
        (self.w - other.w)
            .abs()
            .max((self.x - other.x).abs())
            .max((self.y - other.y).abs())
            .max((self.z - other.z).abs())
    }
}

impl<T: Real> Mul for Quaternion<T> {
    type Output = Self;

    fn mul(self, r: Self) -> Self {
        Self::new(
            self.w * r.w - self.x * r.x - self.y * r.y - self.z * r.z,
            self.w * r.x + self.x * r.w + self.y * r.z - self.z * r.y,
            self.w * r.y - self.x * r.z + self.y * r.w + self.z * r.x,
            self.w * r.z + self.x * r.y - self.y * r.x + self.z * r.w,
        )
    }
}

impl<T: Real> Neg for Quaternion<T> {
    type Output = Self;

    fn neg(self) -> Self {
        Self::new(-self.w, -self.x, -self.y, -self.z)
    }
}

impl<T: Real> Default for Quaternion<T> {
    fn default() -> Self {
        Self::identity()
    }
}
