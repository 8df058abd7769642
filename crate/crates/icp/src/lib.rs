//! Pose refinement by Generalized-ICP: depth segments to point clouds, an
//! exact k-d tree, plane-to-plane covariances, Gauss-Newton alignment and
//! ASCII PLY exchange.

pub mod cloud;
pub mod error;
pub mod gicp;
pub mod kdtree;
pub mod ply;

pub use cloud::{estimate_covariances, median_spacing, plane_covariance, segment_to_cloud, PointCloud};
pub use error::IcpError;
pub use gicp::{align_pairs, apply_update, damped_step, gicp_refine, pair_cost, GicpConfig, GicpResult, Pair};
pub use kdtree::KdTree;
pub use ply::{read_ply, write_ply};
