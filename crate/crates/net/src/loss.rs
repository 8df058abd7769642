//! Weighted translation/orientation MSE and its multi-block masked variant.

use serde::{Deserialize, Serialize};
use sixd_core::Pose5D;

use crate::error::NetError;
use crate::head::PoseGrad;
use crate::scalar::NetScalar;

pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the translation term; the quaternion term gets `1 - alpha`.
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self, NetError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(NetError::Hyperparameter(format!("alpha must be in [0, 1], got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// Squared quaternion distance `|q_pred - q_target|^2` (no sign folding).
pub fn quaternion_sq_error<T: NetScalar>(pred: &Pose5D<T>, target: &Pose5D<T>) -> T {
    let a = pred.q.to_array();
    let b = target.q.to_array();
    a.iter().zip(&b).map(|(x, y)| (*x - *y) * (*x - *y)).sum()
}

/// `alpha * |uv_pred - uv|^2 + (1 - alpha) * |q_pred - q|^2` and its exact
/// gradient with respect to the prediction.
pub fn pose_loss<T: NetScalar>(pred: &Pose5D<T>, target: &Pose5D<T>, weights: LossWeights) -> (T, PoseGrad<T>) {
    let alpha = T::lit(weights.alpha);
    let beta = T::one() - alpha;
    let two = T::lit(2.0);
    let du = pred.u - target.u;
    let dv = pred.v - target.v;
    let p = pred.q.to_array();
    let t = target.q.to_array();
    let dq = [p[0] - t[0], p[1] - t[1], p[2] - t[2], p[3] - t[3]];
    let q_sq: T = dq.iter().map(|d| *d * *d).sum();
    let loss = alpha * (du * du + dv * dv) + beta * q_sq;
    let grad = PoseGrad {
        du: two * alpha * du,
        dv: two * alpha * dv,
        dq: dq.map(|d| two * beta * d),
    };
    (loss, grad)
}

/// Loss on block `class_id` only; every other block gets an exactly zero
/// gradient.
pub fn masked_multiblock_loss<T: NetScalar>(
    preds: &[Pose5D<T>],
    target: &Pose5D<T>,
    class_id: usize,
    weights: LossWeights,
) -> Result<(T, Vec<PoseGrad<T>>), NetError> {
    let pred = preds.get(class_id).ok_or(NetError::ClassOutOfRange {
        class_id,
        blocks: preds.len(),
    })?;
    let (loss, g) = pose_loss(pred, target, weights);
    let mut grads = vec![PoseGrad::zero(); preds.len()];
    grads[class_id] = g;
    Ok((loss, grads))
}
