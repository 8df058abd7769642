//! Geometry shared by the pose pipeline: quaternions, rotational symmetry
//! handling, the pinhole camera and the 5D to 6D lift.
//!
//! Everything numeric is generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the scalar for the common cases.

pub mod camera;
pub mod error;
pub mod linalg;
pub mod quaternion;
pub mod scalar;
pub mod symmetry;

pub use camera::{crop_to_pixel, lift_to_6d, lift_to_6d_with_offset, CameraIntrinsics, DepthMap, Pose5D, RigidTransform};
pub use error::GeometryError;
pub use linalg::{Mat3, Vec3};
pub use quaternion::Quaternion;
pub use scalar::Real;
pub use symmetry::{
    angular_distance, canonicalize_symmetry, swing_twist, symmetry_aware_error, SymmetryKind, SymmetrySpec,
};

pub type Quat = Quaternion<f64>;
pub type Quatf = Quaternion<f32>;
pub type Symmetry = SymmetrySpec<f64>;
pub type Symmetryf = SymmetrySpec<f32>;
pub type Intrinsics = CameraIntrinsics<f64>;
pub type Intrinsicsf = CameraIntrinsics<f32>;
pub type Pose5 = Pose5D<f64>;
pub type Pose5f = Pose5D<f32>;
pub type Transform = RigidTransform<f64>;
pub type Transformf = RigidTransform<f32>;
