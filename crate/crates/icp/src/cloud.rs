use rayon::prelude::*;
use sixd_core::linalg::{identity3, mat3_sandwich, symmetric_eigen};
use sixd_core::{CameraIntrinsics, DepthMap, Mat3, RigidTransform, Vec3};

use crate::error::IcpError;
use crate::kdtree::KdTree;

/// 3D points in meters with optional per-point covariances.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3<f64>>,
    pub covariances: Option<Vec<Mat3<f64>>>,
}

fn is_psd(c: &Mat3<f64>) -> bool {
    let scale = c.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    if !c.iter().flatten().all(|v| v.is_finite()) {
        return false;
    }
    let tol = 1e-9 * scale.max(f64::MIN_POSITIVE);
    for i in 0..3 {
        for j in 0..3 {
            if (c[i][j] - c[j][i]).abs() > tol {
                return false;
            }
        }
    }
    symmetric_eigen(c).0[0] >= -tol
}

impl PointCloud {
    pub fn new(points: Vec<Vec3<f64>>) -> Self {
        Self {
            points,
            covariances: None,
        }
    }

    /// Cloud with covariances, which must be one per point and symmetric
    /// positive semi-definite.
    pub fn with_covariances(points: Vec<Vec3<f64>>, covariances: Vec<Mat3<f64>>) -> Result<Self, IcpError> {
        if covariances.len() != points.len() {
            return Err(IcpError::InvalidConfig(format!(
                "{} covariances for {} points",
                covariances.len(),
                points.len()
            )));
        }
        if let Some(i) = covariances.iter().position(|c| !is_psd(c)) {
            return Err(IcpError::InvalidCovariance(i));
        }
        Ok(Self {
            points,
            covariances: Some(covariances),
        })
    }

    /// Every covariance set to the identity (point-to-point mode).
    pub fn with_identity_covariances(points: Vec<Vec3<f64>>) -> Self {
        let n = points.len();
        Self {
            points,
            covariances: Some(vec![identity3(); n]),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// The cloud moved by `t`; covariances rotate as `R C R^T`.
    pub fn transformed(&self, t: &RigidTransform<f64>) -> Self {
        let r = t.rotation.to_rotation_matrix();
        Self {
            points: self.points.iter().map(|p| t.transform_point(*p)).collect(),
            covariances: self
                .covariances
                .as_ref()
                .map(|cs| cs.iter().map(|c| mat3_sandwich(&r, c)).collect()),
        }
    }
}

/// Back-projects every pixel that is set in `mask` (row-major,
/// `depth.width * depth.height` entries) and has valid depth.
pub fn segment_to_cloud(
    mask: &[bool],
    mask_dims: (usize, usize),
    depth: &DepthMap,
    intrinsics: &CameraIntrinsics<f64>,
) -> Result<PointCloud, IcpError> {
    if mask_dims != (depth.width, depth.height) || mask.len() != depth.width * depth.height {
        return Err(IcpError::DimensionMismatch {
            mask: mask_dims,
            depth: (depth.width, depth.height),
        });
    }
    let mut points = Vec::new();
    for y in 0..depth.height {
        for x in 0..depth.width {
            if !mask[y * depth.width + x] {
                continue;
            }
            let d = depth.get(x, y);
            if d > 0.0 && d.is_finite() {
                points.push(intrinsics.back_project(x as f64, y as f64, d as f64));
            }
        }
    }
    if points.is_empty() {
        return Err(IcpError::EmptySegment);
    }
    Ok(PointCloud::new(points))
}

/// Plane-to-plane covariances: the scatter of each point's `k_neighbors`
/// nearest neighbors (the point included) is eigen-decomposed and rebuilt
/// with eigenvalues `(plane_epsilon, 1, 1)`, smallest first.
pub fn estimate_covariances(cloud: &PointCloud, k_neighbors: usize, plane_epsilon: f64) -> Result<PointCloud, IcpError> {
    if k_neighbors < 3 {
        return Err(IcpError::InvalidConfig(format!("k_neighbors must be at least 3, got {k_neighbors}")));
    }
    if !(plane_epsilon > 0.0) {
        return Err(IcpError::InvalidConfig(format!("plane_epsilon must be positive, got {plane_epsilon}")));
    }
    if cloud.len() <= k_neighbors {
        return Err(IcpError::TooFewPoints {
            have: cloud.len(),
            need: k_neighbors,
        });
    }
    let tree = KdTree::build(&cloud.points)?;
    let covariances = cloud
        .points
        .par_iter()
        .map(|p| {
            let nn = tree.k_nearest(*p, k_neighbors);
            let inv = 1.0 / nn.len() as f64;
            let mut mean = [0.0; 3];
            for &(i, _) in &nn {
                for a in 0..3 {
                    mean[a] += cloud.points[i][a] * inv;
                }
            }
            let mut scatter = [[0.0; 3]; 3];
            for &(i, _) in &nn {
                let d = [
                    cloud.points[i][0] - mean[0],
                    cloud.points[i][1] - mean[1],
                    cloud.points[i][2] - mean[2],
                ];
                for r in 0..3 {
                    for c in 0..3 {
                        scatter[r][c] += d[r] * d[c] * inv;
                    }
                }
            }
            plane_covariance(&scatter, plane_epsilon)
        })
        .collect();
    Ok(PointCloud {
        points: cloud.points.clone(),
        covariances: Some(covariances),
    })
}

/// `V diag(eps, 1, 1) V^T` for the eigenvectors `V` of `scatter`.
pub fn plane_covariance(scatter: &Mat3<f64>, plane_epsilon: f64) -> Mat3<f64> {
    let (_, v) = symmetric_eigen(scatter);
    let lambda = [plane_epsilon, 1.0, 1.0];
    let mut c = [[0.0; 3]; 3];
    for r in 0..3 {
        for col in 0..3 {
            c[r][col] = (0..3).map(|k| v[r][k] * lambda[k] * v[col][k]).sum();
        }
    }
    c
}

/// Median distance from each point to its nearest other point.
pub fn median_spacing(points: &[Vec3<f64>]) -> Result<f64, IcpError> {
    if points.len() < 2 {
        return Err(IcpError::TooFewPoints {
            have: points.len(),
            need: 1,
        });
    }
    let tree = KdTree::build(points)?;
    let mut d: Vec<f64> = points.par_iter().map(|p| tree.k_nearest(*p, 2)[1].1).collect();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}
