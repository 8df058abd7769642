//! Rotational object symmetries: canonical ground-truth orientations and
//! orientation errors that ignore rotations the object is invariant to.
//!
//! Symmetry rotations live in the object frame, so a group element `s` acts
//! on an orientation `q` from the right: `q * s` renders identically to `q`.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::linalg::{self, Vec3};
use crate::quaternion::Quaternion;
use crate::scalar::Real;

/// Below this norm the twist about the axis is undefined (a half turn about
/// an axis perpendicular to the symmetry axis).
const TWIST_SINGULAR_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryKind {
    None,
    /// Invariant to rotations by multiples of `2*pi/order` about the axis.
    Discrete { order: u32 },
    /// Invariant to every rotation about the axis.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SymmetryRecord", into = "SymmetryRecord")]
pub struct SymmetrySpec<T: Real> {
    axis: Vec3<T>,
    kind: SymmetryKind,
}

impl<T: Real> SymmetrySpec<T> {
    /// Builds a spec, normalizing `axis`.
    pub fn new(axis: Vec3<T>, kind: SymmetryKind) -> Result<Self, GeometryError> {
        let n = linalg::norm(axis);
        if !(n > T::lit(1e-12)) || !n.is_finite() {
            return Err(GeometryError::InvalidSymmetry(format!(
                "axis must be nonzero and finite, got {:?}",
                axis
            )));
        }
        if let SymmetryKind::Discrete { order } = kind {
            if order < 2 {
                return Err(GeometryError::InvalidSymmetry(format!(
                    "discrete order must be >= 2, got {order}"
                )));
            }
        }
        Ok(Self {
            axis: linalg::scale(axis, T::one() / n),
            kind,
        })
    }

    pub fn none() -> Self {
        Self {
            axis: [T::zero(), T::zero(), T::one()],
            kind: SymmetryKind::None,
        }
    }

    pub fn continuous(axis: Vec3<T>) -> Result<Self, GeometryError> {
        Self::new(axis, SymmetryKind::Continuous)
    }

    pub fn discrete(axis: Vec3<T>, order: u32) -> Result<Self, GeometryError> {
        Self::new(axis, SymmetryKind::Discrete { order })
    }

    pub fn axis(&self) -> Vec3<T> {
        self.axis
    }

    pub fn kind(&self) -> SymmetryKind {
        self.kind
    }

    /// The `k`-th element of a discrete group, or the rotation by `angle`
    /// about the axis for any kind.
    pub fn rotation_about_axis(&self, angle: T) -> Quaternion<T> {
        Quaternion::from_axis_angle(self.axis, angle)
    }

    /// All elements of a discrete group (identity first). `None` yields only
    /// the identity; continuous groups have no finite listing and also yield
    /// only the identity.
    pub fn discrete_elements(&self) -> Vec<Quaternion<T>> {
        match self.kind {
            SymmetryKind::Discrete { order } => (0..order)
                .map(|k| {
                    let angle = T::TAU() * T::from_usize_lossy(k as usize) / T::from_usize_lossy(order as usize);
                    self.rotation_about_axis(angle)
                })
                .collect(),
            _ => vec![Quaternion::identity()],
        }
    }

    pub fn cast<U: Real>(&self) -> SymmetrySpec<U> {
        SymmetrySpec {
            axis: self.axis.map(|a| U::lit(a.to_f64_lossy())),
            kind: self.kind,
        }
    }
}

/// On-disk form: `{"axis":[x,y,z], "kind":"none"|"continuous"|"discrete", "order":n}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymmetryRecord {
    axis: [f64; 3],
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    order: Option<u32>,
}

impl<T: Real> TryFrom<SymmetryRecord> for SymmetrySpec<T> {
    type Error = GeometryError;

    fn try_from(r: SymmetryRecord) -> Result<Self, Self::Error> {
        let kind = match (r.kind.as_str(), r.order) {
            ("none", _) => SymmetryKind::None,
            ("continuous", _) => SymmetryKind::Continuous,
            ("discrete", Some(order)) => SymmetryKind::Discrete { order },
            ("discrete", None) => {
                return Err(GeometryError::InvalidSymmetry("discrete symmetry requires \"order\"".into()))
            }
            (other, _) => return Err(GeometryError::InvalidSymmetry(format!("unknown kind {other:?}"))),
        };
        Self::new(r.axis.map(T::lit), kind)
    }
}

impl<T: Real> From<SymmetrySpec<T>> for SymmetryRecord {
    fn from(s: SymmetrySpec<T>) -> Self {
        let (kind, order) = match s.kind {
            SymmetryKind::None => ("none", None),
            SymmetryKind::Continuous => ("continuous", None),
            SymmetryKind::Discrete { order } => ("discrete", Some(order)),
        };
        Self {
            axis: s.axis.map(|a| a.to_f64_lossy()),
            kind: kind.to_string(),
            order,
        }
    }
}

/// Factors `q = swing * twist` where `twist` rotates purely about `axis` and
/// `swing` has no rotation component about it.
///
/// At the singularity (a half turn about an axis perpendicular to `axis`)
/// the twist is taken to be the identity.
pub fn swing_twist<T: Real>(q: Quaternion<T>, axis: Vec3<T>) -> (Quaternion<T>, Quaternion<T>) {
    let axis = linalg::scale(axis, T::one() / linalg::norm(axis));
    let p = linalg::dot(q.vector(), axis);
    let twist = Quaternion::new(q.w, axis[0] * p, axis[1] * p, axis[2] * p);
    let n = twist.norm();
    if n < T::lit(TWIST_SINGULAR_NORM) {
        return (q, Quaternion::identity());
    }
    let twist = twist.scaled(T::one() / n);
    (q * twist.conjugate(), twist)
}

/// Signed rotation angle (radians) of a pure twist about `axis`.
fn twist_angle<T: Real>(twist: Quaternion<T>, axis: Vec3<T>) -> T {
    let s = linalg::dot(twist.vector(), axis);
    T::lit(2.0) * s.atan2(twist.w)
}

/// Strict "greater" on `(w, x, y, z)` with a small tolerance per component.
fn lexicographically_greater<T: Real>(a: Quaternion<T>, b: Quaternion<T>) -> bool {
    let tol = T::epsilon() * T::lit(64.0);
    for (x, y) in a.to_array().into_iter().zip(b.to_array()) {
        if (x - y).abs() > tol {
            return x > y;
        }
    }
    false
}

/// Maps every orientation in a symmetry orbit to one representative.
///
/// * `None`: hemisphere canonicalization only.
/// * `Continuous`: the swing part of the swing-twist decomposition.
/// * `Discrete(n)`: among `q * R(2*pi*k/n)` (hemisphere-canonicalized), the
///   candidate with the largest `w`, ties broken lexicographically on
///   `(w, x, y, z)`.
pub fn canonicalize_symmetry<T: Real>(q: Quaternion<T>, spec: &SymmetrySpec<T>) -> Quaternion<T> {
    match spec.kind {
        SymmetryKind::None => q.canonicalize_hemisphere(),
        SymmetryKind::Continuous => swing_twist(q, spec.axis).0.canonicalize_hemisphere(),
        SymmetryKind::Discrete { .. } => {
            let mut best: Option<Quaternion<T>> = None;
            for s in spec.discrete_elements() {
                let c = (q * s).canonicalize_hemisphere();
                if !matches!(best, Some(b) if !lexicographically_greater(c, b)) {
                    best = Some(c);
                }
            }
            best.unwrap_or_else(|| q.canonicalize_hemisphere())
        }
    }
}

/// Plain geodesic distance between two orientations, in degrees `[0, 180]`.
/// Invariant to the sign of either argument.
pub fn angular_distance<T: Real>(q1: Quaternion<T>, q2: Quaternion<T>) -> T {
    (q1.conjugate() * q2).angle().to_degrees()
}

/// Orientation error in degrees that ignores rotations the object is
/// symmetric under.
///
/// For continuous symmetries this takes the relative rotation
/// `q_gt^-1 * q_pred`, extracts its twist angle about the axis, premultiplies
/// by the opposite twist and measures what is left. Discrete symmetries take
/// the minimum plain distance over the group.
pub fn symmetry_aware_error<T: Real>(q_gt: Quaternion<T>, q_pred: Quaternion<T>, spec: &SymmetrySpec<T>) -> T {
    match spec.kind {
        SymmetryKind::None => angular_distance(q_gt, q_pred),
        SymmetryKind::Continuous => {
            let q_error = q_gt.conjugate() * q_pred;
            let (_, twist) = swing_twist(q_error, spec.axis);
            let psi = twist_angle(twist, spec.axis);
            let q_prime = spec.rotation_about_axis(-psi);
            (q_prime * q_error).angle().to_degrees()
        }
        SymmetryKind::Discrete { .. } => spec
            .discrete_elements()
            .into_iter()
            .map(|s| angular_distance(q_gt * s, q_pred))
            .fold(T::infinity(), |a, b| a.min(b)),
    }
}
