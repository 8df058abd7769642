//! Generalized-ICP: Gauss-Newton on the plane-to-plane Mahalanobis cost
//! with nearest-neighbor correspondences.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sixd_core::linalg::{mat3_add, mat3_inverse, mat3_sandwich, skew, solve};
use sixd_core::{Mat3, Quaternion, RigidTransform, Vec3};

use crate::cloud::median_spacing;
use crate::error::IcpError;
use crate::kdtree::KdTree;
use crate::PointCloud;

/// Halvings tried when a step raises the cost.
pub const MAX_HALVINGS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GicpConfig {
    pub max_iterations: usize,
    /// `None` uses twice the median nearest-neighbor spacing of the scene.
    pub max_correspondence_distance: Option<f64>,
    /// Stop once the 6-vector update norm falls below this.
    pub transform_epsilon: f64,
    pub k_neighbors: usize,
    pub plane_epsilon: f64,
}

impl Default for GicpConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_correspondence_distance: None,
            transform_epsilon: 1e-8,
            k_neighbors: 10,
            plane_epsilon: 1e-3,
        }
    }
}

impl GicpConfig {
    pub fn validate(&self) -> Result<(), IcpError> {
        let bad = |k: &str| Err(IcpError::InvalidConfig(format!("{k} must be positive")));
        if self.max_iterations == 0 {
            return bad("max_iterations");
        }
        if let Some(d) = self.max_correspondence_distance {
            if !(d > 0.0 && d.is_finite()) {
                return bad("max_correspondence_distance");
            }
        }
        if !(self.transform_epsilon > 0.0) {
            return bad("transform_epsilon");
        }
        if self.k_neighbors == 0 {
            return bad("k_neighbors");
        }
        if !(self.plane_epsilon > 0.0) {
            return bad("plane_epsilon");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GicpResult {
    pub transform: RigidTransform<f64>,
    /// Cost after the last accepted update, under its correspondences.
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Correspondences used in the last iteration.
    pub correspondences: usize,
}

/// One correspondence with its combined information matrix.
#[derive(Debug, Clone, Copy)]
pub struct Pair {
    pub model: Vec3<f64>,
    pub scene: Vec3<f64>,
    pub information: Mat3<f64>,
}

fn residual(t: &RigidTransform<f64>, p: &Pair) -> Vec3<f64> {
    let m = t.transform_point(p.model);
    [p.scene[0] - m[0], p.scene[1] - m[1], p.scene[2] - m[2]]
}

fn quad(m: &Mat3<f64>, d: &Vec3<f64>) -> f64 {
    let mut s = 0.0;
    for r in 0..3 {
        for c in 0..3 {
            s += d[r] * m[r][c] * d[c];
        }
    }
    s
}

/// `sum d^T M d` over the pairs at transform `t`.
pub fn pair_cost(t: &RigidTransform<f64>, pairs: &[Pair]) -> f64 {
    pairs.iter().map(|p| quad(&p.information, &residual(t, p))).sum()
}

/// Applies the small-angle update `(w, v)` on the left: `x -> exp(w) x + v`.
pub fn apply_update(t: &RigidTransform<f64>, delta: &[f64; 6]) -> RigidTransform<f64> {
    let dq = Quaternion::from_scaled_axis([delta[0], delta[1], delta[2]]);
    let rotation = (dq * t.rotation).normalize().unwrap_or(t.rotation);
    let tr = dq.rotate(t.translation);
    RigidTransform::new(rotation, [tr[0] + delta[3], tr[1] + delta[4], tr[2] + delta[5]])
}

/// Gauss-Newton step for fixed pairs, `None` when the normal equations are
/// singular.
pub fn gauss_newton_step(t: &RigidTransform<f64>, pairs: &[Pair]) -> Option<[f64; 6]> {
    let mut h = [[0.0; 6]; 6];
    let mut g = [0.0; 6];
    for p in pairs {
        let x = t.transform_point(p.model);
        let d = residual(t, p);
        // d(delta) = d + [x]_x w - v
        let sx = skew(x);
        let mut j = [[0.0; 6]; 3];
        for r in 0..3 {
            for c in 0..3 {
                j[r][c] = sx[r][c];
            }
            j[r][3 + r] = -1.0;
        }
        let m = &p.information;
        let mut mj = [[0.0; 6]; 3];
        for r in 0..3 {
            for c in 0..6 {
                mj[r][c] = (0..3).map(|k| m[r][k] * j[k][c]).sum();
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                h[a][b] += (0..3).map(|k| j[k][a] * mj[k][b]).sum::<f64>();
            }
            g[a] += (0..3).map(|k| mj[k][a] * d[k]).sum::<f64>();
        }
    }
    let step = solve(&h, &g.map(|v| -v), 1e-12)?;
    step.iter().all(|v| v.is_finite()).then_some(step)
}

/// Outcome of one damped update under fixed pairs.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub transform: RigidTransform<f64>,
    pub cost: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

/// Gauss-Newton step with up to [`MAX_HALVINGS`] halvings until the cost
/// does not increase. A rejected step leaves the transform unchanged.
pub fn damped_step(t: &RigidTransform<f64>, pairs: &[Pair], iteration: usize) -> Result<StepOutcome, IcpError> {
    let before = pair_cost(t, pairs);
    let mut delta = gauss_newton_step(t, pairs).ok_or(IcpError::Singular {
        iteration,
        correspondences: pairs.len(),
    })?;
    for _ in 0..=MAX_HALVINGS {
        let cand = apply_update(t, &delta);
        let cost = pair_cost(&cand, pairs);
        if cost <= before {
            return Ok(StepOutcome {
                transform: cand,
                cost,
                step_norm: delta.iter().map(|v| v * v).sum::<f64>().sqrt(),
                accepted: true,
            });
        }
        delta = delta.map(|v| 0.5 * v);
    }
    Ok(StepOutcome {
        transform: *t,
        cost: before,
        step_norm: 0.0,
        accepted: false,
    })
}

/// Refines `initial`, the pose taking model coordinates into the scene frame.
pub fn gicp_refine(
    model: &PointCloud,
    scene: &PointCloud,
    initial: &RigidTransform<f64>,
    config: &GicpConfig,
) -> Result<GicpResult, IcpError> {
    config.validate()?;
    if model.is_empty() || scene.is_empty() {
        return Err(IcpError::EmptyCloud);
    }
    let model_cov = model.covariances.as_ref().ok_or(IcpError::MissingCovariances)?;
    let scene_cov = scene.covariances.as_ref().ok_or(IcpError::MissingCovariances)?;
    let max_dist = match config.max_correspondence_distance {
        Some(d) => d,
        None => 2.0 * median_spacing(&scene.points)?,
    };
    let tree = KdTree::build(&scene.points)?;
    let mut t = RigidTransform::new(initial.rotation.normalize().unwrap_or(initial.rotation), initial.translation);
    let mut result = GicpResult {
        transform: t,
        cost: 0.0,
        iterations: 0,
        converged: false,
        correspondences: 0,
    };
    for it in 0..config.max_iterations {
        let r = t.rotation.to_rotation_matrix();
        let pairs: Vec<Pair> = model
            .points
            .par_iter()
            .zip(model_cov.par_iter())
            .filter_map(|(p, c)| {
                let (j, d) = tree.nearest(t.transform_point(*p));
                if d > max_dist {
                    return None;
                }
                let combined = mat3_add(&scene_cov[j], &mat3_sandwich(&r, c));
                Some(Pair {
                    model: *p,
                    scene: scene.points[j],
                    information: mat3_inverse(&combined)?,
                })
            })
            .collect();
        if pairs.is_empty() {
            return Err(IcpError::NoOverlap(max_dist));
        }
        let step = damped_step(&t, &pairs, it)?;
        t = step.transform;
        result = GicpResult {
            transform: t,
            cost: step.cost,
            iterations: it + 1,
            converged: false,
            correspondences: pairs.len(),
        };
        if !step.accepted || step.step_norm < config.transform_epsilon {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}

/// Minimizes the cost over fixed, index-matched correspondences with the
/// given information matrices (one per pair). Used for exact-correspondence
/// fixtures.
pub fn align_pairs(
    pairs: &[Pair],
    initial: &RigidTransform<f64>,
    config: &GicpConfig,
) -> Result<GicpResult, IcpError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(IcpError::EmptyCloud);
    }
    let mut t = *initial;
    let mut result = GicpResult {
        transform: t,
        cost: pair_cost(&t, pairs),
        iterations: 0,
        converged: false,
        correspondences: pairs.len(),
    };
    for it in 0..config.max_iterations {
        let step = damped_step(&t, pairs, it)?;
        t = step.transform;
        result.transform = t;
        result.cost = step.cost;
        result.iterations = it + 1;
        if !step.accepted || step.step_norm < config.transform_epsilon {
            result.converged = true;
            break;
        }
    }
    Ok(result)
}
