//! The pose head: each 6-wide output block is `(u, v, qw, qx, qy, qz)` with
//! the quaternion part L2-normalized.

use sixd_core::{Pose5D, Quaternion};

use crate::error::NetError;
use crate::scalar::NetScalar;

pub const BLOCK_WIDTH: usize = 6;
/// Raw quaternions shorter than this cannot be normalized.
pub const DEGENERATE_HEAD_NORM: f64 = 1e-8;

/// Gradient of a scalar with respect to one predicted [`Pose5D`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGrad<T> {
    pub du: T,
    pub dv: T,
    pub dq: [T; 4],
}

impl<T: NetScalar> PoseGrad<T> {
    pub fn zero() -> Self {
        Self {
            du: T::zero(),
            dv: T::zero(),
            dq: [T::zero(); 4],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.du == T::zero() && self.dv == T::zero() && self.dq.iter().all(|v| *v == T::zero())
    }
}

/// Splits raw outputs into per-block poses. Predicted translations are not
/// clamped to `[-1, 1]`.
pub fn pose_head_forward<T: NetScalar>(raw: &[T], blocks: usize) -> Result<Vec<Pose5D<T>>, NetError> {
    if raw.len() != blocks * BLOCK_WIDTH {
        return Err(NetError::Shape(format!(
            "head expects {} outputs for {blocks} blocks, got {}",
            blocks * BLOCK_WIDTH,
            raw.len()
        )));
    }
    raw.chunks(BLOCK_WIDTH)
        .enumerate()
        .map(|(b, c)| {
            let q = Quaternion::new(c[2], c[3], c[4], c[5]);
            let n = q.norm();
            if !(n >= T::lit(DEGENERATE_HEAD_NORM)) {
                return Err(NetError::DegenerateHead(n.to_f64_lossy(), b));
            }
            Ok(Pose5D {
                u: c[0],
                v: c[1],
                q: q.scaled(T::one() / n),
            })
        })
        .collect()
}

/// Back-propagates per-block pose gradients through the normalization:
/// `d raw_q = (I - q q^T) / |raw_q| * d q`.
pub fn pose_head_backward<T: NetScalar>(raw: &[T], grads: &[PoseGrad<T>]) -> Vec<T> {
    let mut out = vec![T::zero(); raw.len()];
    for ((c, g), o) in raw.chunks(BLOCK_WIDTH).zip(grads).zip(out.chunks_mut(BLOCK_WIDTH)) {
        o[0] = g.du;
        o[1] = g.dv;
        if g.dq.iter().all(|v| *v == T::zero()) {
            continue;
        }
        let r = [c[2], c[3], c[4], c[5]];
        let n = r.iter().map(|v| *v * *v).sum::<T>().sqrt();
        let qhat = r.map(|v| v / n);
        let proj: T = qhat.iter().zip(&g.dq).map(|(a, b)| *a * *b).sum();
        for k in 0..4 {
            o[2 + k] = (g.dq[k] - qhat[k] * proj) / n;
        }
    }
    out
}
