//! Central finite-difference checks of every analytic gradient in the crate.
//!
//! Each check packs the differentiated quantities into one flat `f64` vector,
//! perturbs every coordinate by `±eps` and compares the symmetric difference
//! quotient with the analytic gradient. Coordinates where a ReLU switches
//! state between the two perturbed evaluations are skipped, because the
//! difference quotient straddles a kink there.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixd_core::{Pose5D, Quaternion};

use crate::arch::{build_architecture, ArchitectureSpec, HeadKind, Network, Variant};
use crate::error::NetError;
use crate::head::{pose_head_backward, pose_head_forward, PoseGrad, BLOCK_WIDTH};
use crate::layers::{conv2d_backward, conv2d_forward, dense_backward, dense_forward, Activation, ConvShape};
use crate::loss::{masked_multiblock_loss, pose_loss, LossWeights};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a ReLU changed state within `±eps`.
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tolerance: f64,
    pub results: Vec<CheckResult>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.results.iter().map(|r| r.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance && self.results.iter().all(|r| r.checked > 0)
    }
}

/// `|a - n| / max(|a|, |n|, 1e-6)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compares `analytic` with central differences of `eval`, which returns the
/// objective and a ReLU activity pattern for a flat parameter vector.
pub fn check_flat<F>(name: &str, x: &[f64], analytic: &[f64], eps: f64, mut eval: F) -> Result<CheckResult, NetError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<bool>), NetError>,
{
    assert_eq!(x.len(), analytic.len(), "{name}: gradient length");
    let mut probe = x.to_vec();
    let (mut max_rel, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for i in 0..x.len() {
        probe[i] = x[i] + eps;
        let (fp, mp) = eval(&probe)?;
        probe[i] = x[i] - eps;
        let (fm, mm) = eval(&probe)?;
        probe[i] = x[i];
        if mp != mm {
            skipped += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        max_rel = max_rel.max(relative_error(analytic[i], numeric));
        checked += 1;
    }
    Ok(CheckResult {
        name: name.to_string(),
        max_rel_error: max_rel,
        checked,
        skipped,
    })
}

/// Weight, bias and input recovered from a flat parameter vector.
type Unpacked = (Tensor<f64>, Tensor<f64>, Vec<f64>);

fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn relu_mask(y: &[f64], act: Activation) -> Vec<bool> {
    match act {
        Activation::Relu => y.iter().map(|v| *v > 0.0).collect(),
        Activation::None => Vec::new(),
    }
}

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> Quaternion<f64> {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        if q.norm() > 0.1 {
            return q.normalize().expect("norm checked").canonicalize_hemisphere();
        }
    }
}

fn random_target(rng: &mut ChaCha8Rng) -> Pose5D<f64> {
    Pose5D {
        u: rng.gen_range(-0.5..0.5),
        v: rng.gen_range(-0.5..0.5),
        q: random_unit_quaternion(rng),
    }
}

fn conv_check(rng: &mut ChaCha8Rng, act: Activation, stride: usize, eps: f64) -> Result<CheckResult, NetError> {
    let shape = ConvShape {
        in_channels: 2,
        out_channels: 3,
        in_h: 7,
        in_w: 6,
        stride,
    };
    let (nw, nb, nx) = (shape.out_channels * shape.patch_len(), shape.out_channels, shape.input_len());
    let x0 = uniform(rng, nw + nb + nx, 1.0);
    let proj = uniform(rng, shape.output_len(), 1.0);
    let unpack = |x: &[f64]| -> Result<Unpacked, NetError> {
        Ok((
            Tensor::from_vec(&shape.weight_shape(), x[..nw].to_vec())?,
            Tensor::from_vec(&[nb], x[nw..nw + nb].to_vec())?,
            x[nw + nb..].to_vec(),
        ))
    };
    let (w, b, input) = unpack(&x0)?;
    let cache = conv2d_forward(&input, &w, &b, &shape, act)?;
    let (dw, db, dx) = conv2d_backward(&cache, &w, &shape, act, &proj, true);
    let analytic: Vec<f64> = dw.data().iter().chain(db.data()).chain(&dx).copied().collect();
    let name = format!("conv2d stride {stride} {}", if act == Activation::Relu { "relu" } else { "linear" });
    check_flat(&name, &x0, &analytic, eps, |x| {
        let (w, b, input) = unpack(x)?;
        let y = conv2d_forward(&input, &w, &b, &shape, act)?.output;
        Ok((dot(&proj, &y), relu_mask(&y, act)))
    })
}

fn dense_check(rng: &mut ChaCha8Rng, act: Activation, eps: f64) -> Result<CheckResult, NetError> {
    let (out, inp) = (5, 7);
    let x0 = uniform(rng, out * inp + out + inp, 1.0);
    let proj = uniform(rng, out, 1.0);
    let unpack = |x: &[f64]| -> Result<Unpacked, NetError> {
        Ok((
            Tensor::from_vec(&[out, inp], x[..out * inp].to_vec())?,
            Tensor::from_vec(&[out], x[out * inp..out * inp + out].to_vec())?,
            x[out * inp + out..].to_vec(),
        ))
    };
    let (w, b, input) = unpack(&x0)?;
    let y = dense_forward(&input, &w, &b, act)?;
    let (dw, db, dx) = dense_backward(&input, &y, &w, act, &proj, true);
    let analytic: Vec<f64> = dw.data().iter().chain(db.data()).chain(&dx).copied().collect();
    let name = format!("dense {}", if act == Activation::Relu { "relu" } else { "linear" });
    check_flat(&name, &x0, &analytic, eps, |x| {
        let (w, b, input) = unpack(x)?;
        let y = dense_forward(&input, &w, &b, act)?;
        Ok((dot(&proj, &y), relu_mask(&y, act)))
    })
}

/// Linear functional of the normalized head outputs.
fn head_normalization_check(rng: &mut ChaCha8Rng, eps: f64) -> Result<CheckResult, NetError> {
    let blocks = 2;
    let raw = uniform(rng, blocks * BLOCK_WIDTH, 1.0);
    let proj = uniform(rng, blocks * BLOCK_WIDTH, 1.0);
    let objective = |raw: &[f64]| -> Result<f64, NetError> {
        let poses = pose_head_forward(raw, blocks)?;
        Ok(poses
            .iter()
            .zip(proj.chunks(BLOCK_WIDTH))
            .map(|(p, c)| c[0] * p.u + c[1] * p.v + dot(&c[2..], &p.q.to_array()))
            .sum())
    };
    let grads: Vec<PoseGrad<f64>> = proj
        .chunks(BLOCK_WIDTH)
        .map(|c| PoseGrad {
            du: c[0],
            dv: c[1],
            dq: [c[2], c[3], c[4], c[5]],
        })
        .collect();
    let analytic = pose_head_backward(&raw, &grads);
    check_flat("l2 normalization head", &raw, &analytic, eps, |x| Ok((objective(x)?, Vec::new())))
}

/// Weighted loss with respect to an unconstrained prediction.
fn pose_loss_check(rng: &mut ChaCha8Rng, weights: LossWeights, eps: f64) -> Result<CheckResult, NetError> {
    let target = random_target(rng);
    let x0 = uniform(rng, 6, 1.0);
    let pose = |x: &[f64]| Pose5D {
        u: x[0],
        v: x[1],
        q: Quaternion::new(x[2], x[3], x[4], x[5]),
    };
    let (_, g) = pose_loss(&pose(&x0), &target, weights);
    let analytic = [g.du, g.dv, g.dq[0], g.dq[1], g.dq[2], g.dq[3]];
    check_flat("pose loss", &x0, &analytic, eps, |x| {
        Ok((pose_loss(&pose(x), &target, weights).0, Vec::new()))
    })
}

/// Masked loss composed with the normalization head, over all raw outputs.
fn multiblock_loss_check(rng: &mut ChaCha8Rng, weights: LossWeights, eps: f64) -> Result<CheckResult, NetError> {
    let blocks = 3;
    let class_id = 1;
    let target = random_target(rng);
    let raw = uniform(rng, blocks * BLOCK_WIDTH, 1.0);
    let preds = pose_head_forward(&raw, blocks)?;
    let (_, grads) = masked_multiblock_loss(&preds, &target, class_id, weights)?;
    let analytic = pose_head_backward(&raw, &grads);
    check_flat("masked multi-block loss", &raw, &analytic, eps, |x| {
        let preds = pose_head_forward(x, blocks)?;
        Ok((masked_multiblock_loss(&preds, &target, class_id, weights)?.0, Vec::new()))
    })
}

/// Small network used by the full-network checks: one stem convolution
/// followed by the three stride-2 head convolutions and two hidden layers.
pub fn tiny_network(head: HeadKind, num_classes: usize, seed: u64) -> Result<Network<f64>, NetError> {
    let spec = ArchitectureSpec {
        variant: Variant::Conv3S2,
        head,
        num_classes,
        stem_layers: 1,
        stem_channels: 3,
        head_channels: 4,
        hidden_width: 6,
    };
    build_architecture(&spec, [3, 31, 31], seed)
}

/// Replaces the zero initial biases with random values so bias gradients are
/// exercised and the raw head output cannot vanish when every hidden unit is
/// inactive.
fn randomize_biases(net: &mut Network<f64>, rng: &mut ChaCha8Rng) {
    let last = net.params.tensors.len() - 1;
    for (i, t) in net.params.tensors.iter_mut().enumerate().skip(1).step_by(2) {
        let scale = if i == last { 1.0 } else { 0.2 };
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

fn flatten(net: &Network<f64>, input: &[f64]) -> Vec<f64> {
    net.params.tensors.iter().flat_map(|t| t.data().iter().copied()).chain(input.iter().copied()).collect()
}

fn unflatten(net: &mut Network<f64>, x: &[f64]) -> usize {
    let mut at = 0;
    for t in net.params.tensors.iter_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&x[at..at + n]);
        at += n;
    }
    at
}

/// Loss of the full network with respect to every parameter and the input.
pub fn network_check(
    name: &str,
    net: &Network<f64>,
    input: &[f64],
    target: &Pose5D<f64>,
    class_id: usize,
    weights: LossWeights,
    eps: f64,
) -> Result<CheckResult, NetError> {
    let cache = net.forward(input)?;
    let raw = cache.raw_output();
    let preds = pose_head_forward(raw, net.blocks())?;
    let pose_grads = match net.spec.head {
        HeadKind::SingleBlock => vec![pose_loss(&preds[0], target, weights).1],
        HeadKind::MultiBlock => masked_multiblock_loss(&preds, target, class_id, weights)?.1,
    };
    let d_raw = pose_head_backward(raw, &pose_grads);
    let (grads, d_input) = net.backward(&cache, &d_raw, true);
    let analytic: Vec<f64> = grads
        .tensors
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .chain(d_input)
        .collect();
    let x0 = flatten(net, input);
    let mut probe = net.clone();
    check_flat(name, &x0, &analytic, eps, |x| {
        let at = unflatten(&mut probe, x);
        let input = &x[at..];
        let loss = probe.loss(input, target, class_id, weights)?;
        let mask = probe.forward(input)?.active_mask(&probe.layers);
        Ok((loss, mask))
    })
}

/// Runs every check and collects the results.
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let weights = LossWeights::default();
    let eps = cfg.eps;
    let mut results = vec![
        conv_check(&mut rng, Activation::Relu, 2, eps)?,
        conv_check(&mut rng, Activation::None, 1, eps)?,
        dense_check(&mut rng, Activation::Relu, eps)?,
        dense_check(&mut rng, Activation::None, eps)?,
        head_normalization_check(&mut rng, eps)?,
        pose_loss_check(&mut rng, weights, eps)?,
        multiblock_loss_check(&mut rng, weights, eps)?,
    ];
    for (name, head, classes, class_id) in [
        ("network single-block", HeadKind::SingleBlock, 1, 0),
        ("network multi-block", HeadKind::MultiBlock, 3, 2),
    ] {
        let mut net = tiny_network(head, classes, cfg.seed.wrapping_add(1))?;
        randomize_biases(&mut net, &mut rng);
        let input = uniform(&mut rng, net.input_len(), 1.0);
        let target = random_target(&mut rng);
        results.push(network_check(name, &net, &input, &target, class_id, weights, eps)?);
    }
    Ok(GradCheckReport {
        eps: cfg.eps,
        tolerance: cfg.tolerance,
        results,
    })
}
