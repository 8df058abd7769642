//! Pinhole camera, pose carriers and lifting of image-plane poses to 6D.
//!
//! Pixel `(i, j)` has its center at coordinate `(i, j)`; `x` grows to the
//! right, `y` grows down and the camera looks along `+z`.

use serde::{Deserialize, Serialize};

use crate::error::GeometryError;
use crate::linalg::{self, Vec3};
use crate::quaternion::Quaternion;
use crate::scalar::Real;

/// Side length of the square window used to sample depth for lifting.
pub const DEPTH_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRecord<T>")]
pub struct CameraIntrinsics<T: Real> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsRecord<T> {
    fx: T,
    fy: T,
    cx: T,
    cy: T,
}

impl<T: Real> TryFrom<IntrinsicsRecord<T>> for CameraIntrinsics<T> {
    type Error = GeometryError;

    fn try_from(r: IntrinsicsRecord<T>) -> Result<Self, Self::Error> {
        Self::new(r.fx, r.fy, r.cx, r.cy)
    }
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(fx: T, fy: T, cx: T, cy: T) -> Result<Self, GeometryError> {
        if !(fx > T::zero() && fy > T::zero()) || !fx.is_finite() || !fy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics(format!(
                "focal lengths must be positive, got fx={fx}, fy={fy}"
            )));
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(GeometryError::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: T, width: usize, height: usize) -> Result<Self, GeometryError> {
        let half = T::lit(0.5);
        Self::new(
            focal,
            focal,
            (T::from_usize_lossy(width) - T::one()) * half,
            (T::from_usize_lossy(height) - T::one()) * half,
        )
    }

    /// Projects a camera-frame point. `None` when the point is not in front
    /// of the camera.
    pub fn project(&self, p: Vec3<T>) -> Option<[T; 2]> {
        if !(p[2] > T::zero()) {
            return None;
        }
        Some([self.fx * p[0] / p[2] + self.cx, self.fy * p[1] / p[2] + self.cy])
    }

    /// Point at z-depth `depth` on the ray through pixel `(px, py)`.
    pub fn back_project(&self, px: T, py: T, depth: T) -> Vec3<T> {
        [(px - self.cx) * depth / self.fx, (py - self.cy) * depth / self.fy, depth]
    }

    /// Same camera seen through a window whose top-left pixel is `origin`.
    pub fn shifted(&self, origin: [T; 2]) -> Self {
        Self {
            cx: self.cx - origin[0],
            cy: self.cy - origin[1],
            ..*self
        }
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            fx: U::lit(self.fx.to_f64_lossy()),
            fy: U::lit(self.fy.to_f64_lossy()),
            cx: U::lit(self.cx.to_f64_lossy()),
            cy: U::lit(self.cy.to_f64_lossy()),
        }
    }
}

/// Image-plane pose: crop-normalized translation plus orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose5D<T: Real> {
    pub u: T,
    pub v: T,
    pub q: Quaternion<T>,
}

impl<T: Real> Pose5D<T> {
    /// Validating constructor; `q` is normalized.
    pub fn new(u: T, v: T, q: Quaternion<T>) -> Result<Self, GeometryError> {
        let one = T::one();
        if !(u.abs() <= one && v.abs() <= one) {
            return Err(GeometryError::InvalidPose(format!("crop translation ({u}, {v}) outside [-1, 1]")));
        }
        Ok(Self { u, v, q: q.normalize()? })
    }

    pub fn uv(&self) -> [T; 2] {
        [self.u, self.v]
    }

    pub fn cast<U: Real>(&self) -> Pose5D<U> {
        Pose5D {
            u: U::lit(self.u.to_f64_lossy()),
            v: U::lit(self.v.to_f64_lossy()),
            q: self.q.cast(),
        }
    }
}

/// Rigid body transform `p -> R p + t` (object frame to camera frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform<T: Real> {
    pub rotation: Quaternion<T>,
    pub translation: Vec3<T>,
}

impl<T: Real> Default for RigidTransform<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> RigidTransform<T> {
    pub fn new(rotation: Quaternion<T>, translation: Vec3<T>) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Quaternion::identity(), [T::zero(); 3])
    }

    pub fn transform_point(&self, p: Vec3<T>) -> Vec3<T> {
        linalg::add(self.rotation.rotate(p), self.translation)
    }

    /// `self * other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.transform_point(other.translation),
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.conjugate();
        Self {
            rotation: r,
            translation: linalg::scale(r.rotate(self.translation), -T::one()),
        }
    }

    pub fn cast<U: Real>(&self) -> RigidTransform<U> {
        RigidTransform {
            rotation: self.rotation.cast(),
            translation: self.translation.map(|v| U::lit(v.to_f64_lossy())),
        }
    }
}

/// Row-major depth image in meters; `0` (or any non-positive or non-finite
/// value) marks an invalid pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, depth: f32) -> Self {
        Self {
            width,
            height,
            data: vec![depth; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, d: f32) {
        self.data[y * self.width + x] = d;
    }

    /// Valid depth at signed coordinates, `None` outside the image.
    pub fn valid_at(&self, x: i64, y: i64) -> Option<f32> {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            return None;
        }
        let d = self.get(x as usize, y as usize);
        (d > 0.0 && d.is_finite()).then_some(d)
    }

    /// Median of the valid depths in the `DEPTH_WINDOW` square centered on
    /// the pixel nearest to `(px, py)`. Even counts average the two middle
    /// values.
    pub fn window_median(&self, px: f64, py: f64) -> Option<f64> {
        if !px.is_finite() || !py.is_finite() {
            return None;
        }
        let cx = px.round() as i64;
        let cy = py.round() as i64;
        let r = (DEPTH_WINDOW / 2) as i64;
        let mut vals: Vec<f64> = Vec::with_capacity(DEPTH_WINDOW * DEPTH_WINDOW);
        for y in (cy - r)..=(cy + r) {
            for x in (cx - r)..=(cx + r) {
                if let Some(d) = self.valid_at(x, y) {
                    vals.push(d as f64);
                }
            }
        }
        if vals.is_empty() {
            return None;
        }
        vals.sort_by(|a, b| a.total_cmp(b));
        let n = vals.len();
        Some(if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        })
    }
}

/// Full-image pixel addressed by a crop-normalized translation.
pub fn crop_to_pixel<T: Real>(uv: [T; 2], crop_center: [T; 2], crop_size: T) -> [T; 2] {
    let half = crop_size * T::lit(0.5);
    [crop_center[0] + uv[0] * half, crop_center[1] + uv[1] * half]
}

/// Lifts an image-plane pose to 6D by back-projecting the predicted object
/// center with the depth sampled around it. The rotation passes through.
pub fn lift_to_6d<T: Real>(
    pose: &Pose5D<T>,
    crop_center: [T; 2],
    crop_size: T,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics<T>,
) -> Result<RigidTransform<T>, GeometryError> {
    lift_to_6d_with_offset(pose, crop_center, crop_size, depth, intrinsics, T::zero())
}

/// [`lift_to_6d`] with `center_offset` meters added to the sampled depth.
///
/// The depth image sees the object's front surface, not its origin. When the
/// object model is known the offset between the two along the viewing ray
/// can be supplied here.
pub fn lift_to_6d_with_offset<T: Real>(
    pose: &Pose5D<T>,
    crop_center: [T; 2],
    crop_size: T,
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics<T>,
    center_offset: T,
) -> Result<RigidTransform<T>, GeometryError> {
    let [px, py] = crop_to_pixel(pose.uv(), crop_center, crop_size);
    let d = depth
        .window_median(px.to_f64_lossy(), py.to_f64_lossy())
        .ok_or(GeometryError::MissingDepth {
            x: px.to_f64_lossy(),
            y: py.to_f64_lossy(),
        })?;
    let z = T::lit(d) + center_offset;
    Ok(RigidTransform::new(pose.q, intrinsics.back_project(px, py, z)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(400.0, 400.0, 320.0, 240.0).unwrap()
    }

    fn pose(u: f64, v: f64) -> Pose5D<f64> {
        Pose5D::new(u, v, Quaternion::rx(0.3)).unwrap()
    }

    #[test]
    fn lift_principal_ray() {
        let depth = DepthMap::filled(640, 480, 0.5);
        let t = lift_to_6d(&pose(0.0, 0.0), [320.0, 240.0], 320.0, &depth, &cam()).unwrap();
        assert_eq!(t.translation, [0.0, 0.0, 0.5]);
        assert!(t.rotation.max_abs_diff(Quaternion::rx(0.3)) < 1e-15);
    }

    #[test]
    fn lift_edge_of_crop() {
        let depth = DepthMap::filled(640, 480, 1.0);
        let t = lift_to_6d(&pose(1.0, 0.0), [320.0, 240.0], 320.0, &depth, &cam()).unwrap();
        assert!((t.translation[0] - 0.4).abs() < 1e-12);
        assert!(t.translation[1].abs() < 1e-12);
    }

    #[test]
    fn lift_missing_depth() {
        let mut depth = DepthMap::filled(640, 480, 1.0);
        for y in 230..=250 {
            for x in 310..=330 {
                depth.set(x, y, 0.0);
            }
        }
        let err = lift_to_6d(&pose(0.0, 0.0), [320.0, 240.0], 320.0, &depth, &cam()).unwrap_err();
        assert!(matches!(err, GeometryError::MissingDepth { .. }));
        assert!(err.to_string().contains("missing depth"));
    }

    #[test]
    fn median_ignores_holes_and_outliers() {
        let mut depth = DepthMap::filled(20, 20, 2.0);
        depth.set(10, 10, 0.0);
        depth.set(11, 10, 9.0);
        depth.set(9, 9, f32::NAN);
        assert_eq!(depth.window_median(10.2, 9.8), Some(2.0));
        // window clipped at the border still works
        assert_eq!(depth.window_median(0.0, 0.0), Some(2.0));
        assert_eq!(depth.window_median(-10.0, 0.0), None);
    }

    #[test]
    fn lift_with_offset_moves_along_ray() {
        let depth = DepthMap::filled(640, 480, 1.0);
        let t = lift_to_6d_with_offset(&pose(1.0, 0.0), [320.0, 240.0], 320.0, &depth, &cam(), 0.25).unwrap();
        assert!((t.translation[2] - 1.25).abs() < 1e-12);
        assert!((t.translation[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(CameraIntrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
        assert!(serde_json::from_str::<CameraIntrinsics<f64>>(r#"{"fx":-1,"fy":1,"cx":0,"cy":0}"#).is_err());
        let c = CameraIntrinsics::<f64>::centered(100.0, 128, 96).unwrap();
        assert_eq!((c.cx, c.cy), (63.5, 47.5));
    }

    #[test]
    fn pose5d_validation() {
        assert!(Pose5D::new(1.2, 0.0, Quaternion::<f64>::identity()).is_err());
        assert!(Pose5D::new(0.0, 0.0, Quaternion::<f64>::new(0.0, 0.0, 0.0, 0.0)).is_err());
        let p = Pose5D::new(0.5, -1.0, Quaternion::<f64>::new(2.0, 0.0, 0.0, 0.0)).unwrap();
        assert_eq!(p.q, Quaternion::identity());
    }

    #[test]
    fn rigid_transform_inverse() {
        let t = RigidTransform::new(Quaternion::from_axis_angle([1.0, 1.0, 0.0], 0.8), [0.1, -0.2, 0.9]);
        let p: [f64; 3] = [0.3, 0.4, -0.5];
        let back = t.inverse().transform_point(t.transform_point(p));
        for k in 0..3 {
            assert!((back[k] - p[k]).abs() < 1e-14);
        }
        let id = t.compose(&t.inverse());
        assert!(id.rotation.max_abs_diff(Quaternion::identity()) < 1e-14);
    }
}
