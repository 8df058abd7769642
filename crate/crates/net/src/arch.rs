//! Architecture grid and the network built from it.
//!
//! Every variant shares a jointly trained convolutional stem (stride-2 3x3
//! convolutions) that turns the RGB crop into feature maps. On top of it:
//!
//! * `fc_*`: one fully-connected layer straight to the pose outputs.
//! * `convK_sS`: `K` convolutions of stride `S`, two hidden fully-connected
//!   layers and the linear output layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sixd_core::Pose5D;

use crate::error::NetError;
use crate::head::{pose_head_backward, pose_head_forward, BLOCK_WIDTH};
use crate::layers::{
    conv2d_backward, conv2d_forward, conv_output_size, dense_backward, dense_forward, Activation, ConvCache,
    ConvShape, KERNEL,
};
use crate::loss::{masked_multiblock_loss, pose_loss, LossWeights};
use crate::scalar::NetScalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    FcPerClass,
    FcMultiClass,
    Conv1S4,
    Conv1S8,
    Conv2S2,
    Conv3S2,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::FcPerClass,
        Variant::FcMultiClass,
        Variant::Conv1S4,
        Variant::Conv1S8,
        Variant::Conv2S2,
        Variant::Conv3S2,
    ];

    /// `(count, stride)` of the convolutions between the stem and the
    /// fully-connected layers.
    pub fn head_convs(self) -> (usize, usize) {
        match self {
            Variant::FcPerClass | Variant::FcMultiClass => (0, 1),
            Variant::Conv1S4 => (1, 4),
            Variant::Conv1S8 => (1, 8),
            Variant::Conv2S2 => (2, 2),
            Variant::Conv3S2 => (3, 2),
        }
    }

    pub fn is_fc(self) -> bool {
        matches!(self, Variant::FcPerClass | Variant::FcMultiClass)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::FcPerClass => "fc_per_class",
            Variant::FcMultiClass => "fc_multi_class",
            Variant::Conv1S4 => "conv1_s4",
            Variant::Conv1S8 => "conv1_s8",
            Variant::Conv2S2 => "conv2_s2",
            Variant::Conv3S2 => "conv3_s2",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Variant::FcPerClass => "FC per class",
            Variant::FcMultiClass => "FC multi-class",
            Variant::Conv1S4 => "1 Conv with stride 4",
            Variant::Conv1S8 => "1 Conv with stride 8",
            Variant::Conv2S2 => "2 Conv with stride 2",
            Variant::Conv3S2 => "3 Conv with stride 2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| NetError::Architecture(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// One shared 6-output block.
    SingleBlock,
    /// `6 * num_classes` outputs, one block per class.
    MultiBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub variant: Variant,
    pub head: HeadKind,
    pub num_classes: usize,
    pub stem_layers: usize,
    pub stem_channels: usize,
    pub head_channels: usize,
    pub hidden_width: usize,
}

impl Default for ArchitectureSpec {
    fn default() -> Self {
        Self {
            variant: Variant::Conv3S2,
            head: HeadKind::SingleBlock,
            num_classes: 1,
            stem_layers: 2,
            stem_channels: 32,
            head_channels: 64,
            hidden_width: 128,
        }
    }
}

impl ArchitectureSpec {
    pub fn blocks(&self) -> usize {
        match self.head {
            HeadKind::SingleBlock => 1,
            HeadKind::MultiBlock => self.num_classes,
        }
    }

    pub fn output_width(&self) -> usize {
        BLOCK_WIDTH * self.blocks()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.num_classes == 0 {
            return Err(NetError::Architecture("num_classes must be >= 1".into()));
        }
        if self.stem_layers > 0 && self.stem_channels == 0 {
            return Err(NetError::Architecture("stem_channels must be >= 1".into()));
        }
        if !self.variant.is_fc() && (self.head_channels == 0 || self.hidden_width == 0) {
            return Err(NetError::Architecture("head_channels and hidden_width must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerDesc {
    Conv { shape: ConvShape, activation: Activation },
    Dense { inputs: usize, outputs: usize, activation: Activation },
}

impl LayerDesc {
    fn weight_shape(&self) -> Vec<usize> {
        match self {
            LayerDesc::Conv { shape, .. } => shape.weight_shape().to_vec(),
            LayerDesc::Dense { inputs, outputs, .. } => vec![*outputs, *inputs],
        }
    }

    fn bias_len(&self) -> usize {
        match self {
            LayerDesc::Conv { shape, .. } => shape.out_channels,
            LayerDesc::Dense { outputs, .. } => *outputs,
        }
    }

    fn fan_in(&self) -> usize {
        match self {
            LayerDesc::Conv { shape, .. } => shape.patch_len(),
            LayerDesc::Dense { inputs, .. } => *inputs,
        }
    }
}

/// Learnable tensors in declaration order (`w0, b0, w1, b1, ...`) with their
/// Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub tensors: Vec<Tensor<T>>,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: NetScalar> NetworkParams<T> {
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients {
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// One gradient tensor per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: NetScalar> Gradients<T> {
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_scaled(b, s);
        }
    }

    pub fn max_abs(&self) -> T {
        self.tensors.iter().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }
}

#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Conv(ConvCache<T>),
    Dense { input: Vec<T>, output: Vec<T> },
}

impl<T> LayerCache<T> {
    pub fn output(&self) -> &[T] {
        match self {
            LayerCache::Conv(c) => &c.output,
            LayerCache::Dense { output, .. } => output,
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub layers: Vec<LayerCache<T>>,
}

impl<T: NetScalar> ForwardCache<T> {
    pub fn raw_output(&self) -> &[T] {
        self.layers.last().map(LayerCache::output).unwrap_or(&[])
    }

    /// ReLU activity pattern over all rectified layers.
    pub fn active_mask(&self, layers: &[LayerDesc]) -> Vec<bool> {
        layers
            .iter()
            .zip(&self.layers)
            .filter(|(d, _)| {
                matches!(
                    d,
                    LayerDesc::Conv { activation: Activation::Relu, .. }
                        | LayerDesc::Dense { activation: Activation::Relu, .. }
                )
            })
            .flat_map(|(_, c)| c.output().iter().map(|v| *v > T::zero()))
            .collect()
    }
}

/// Result of [`Network::loss_and_gradients`].
#[derive(Debug, Clone)]
pub struct StepOutput<T: NetScalar> {
    pub loss: T,
    /// Prediction of the block the loss was applied to.
    pub prediction: Pose5D<T>,
    pub gradients: Gradients<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub spec: ArchitectureSpec,
    /// `[channels, height, width]` of the input.
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerDesc>,
    pub params: NetworkParams<T>,
    pub seed: u64,
}

/// Lays out the layers of `spec` for inputs of `input_shape`.
pub fn layer_plan(spec: &ArchitectureSpec, input_shape: [usize; 3]) -> Result<Vec<LayerDesc>, NetError> {
    spec.validate()?;
    let [mut c, mut h, mut w] = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(NetError::Architecture(format!("empty input shape {input_shape:?}")));
    }
    let mut layers = Vec::new();
    let push_conv = |layers: &mut Vec<LayerDesc>, c: &mut usize, h: &mut usize, w: &mut usize, out, stride| {
        let (Some(oh), Some(ow)) = (conv_output_size(*h, stride), conv_output_size(*w, stride)) else {
            return Err(NetError::Architecture(format!(
                "{} collapses: a {KERNEL}x{KERNEL} stride-{stride} conv does not fit a {}x{} feature map",
                spec.variant.name(),
                h,
                w
            )));
        };
        layers.push(LayerDesc::Conv {
            shape: ConvShape {
                in_channels: *c,
                out_channels: out,
                in_h: *h,
                in_w: *w,
                stride,
            },
            activation: Activation::Relu,
        });
        (*c, *h, *w) = (out, oh, ow);
        Ok(())
    };
    for _ in 0..spec.stem_layers {
        push_conv(&mut layers, &mut c, &mut h, &mut w, spec.stem_channels, 2)?;
    }
    let (count, stride) = spec.variant.head_convs();
    for _ in 0..count {
        push_conv(&mut layers, &mut c, &mut h, &mut w, spec.head_channels, stride)?;
    }
    let mut flat = c * h * w;
    if !spec.variant.is_fc() {
        for _ in 0..2 {
            layers.push(LayerDesc::Dense {
                inputs: flat,
                outputs: spec.hidden_width,
                activation: Activation::Relu,
            });
            flat = spec.hidden_width;
        }
    }
    layers.push(LayerDesc::Dense {
        inputs: flat,
        outputs: spec.output_width(),
        activation: Activation::None,
    });
    Ok(layers)
}

/// Builds a freshly initialized network: He-uniform weights, zero biases.
pub fn build_architecture<T: NetScalar>(
    spec: &ArchitectureSpec,
    input_shape: [usize; 3],
    seed: u64,
) -> Result<Network<T>, NetError> {
    let layers = layer_plan(spec, input_shape)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = Vec::with_capacity(layers.len() * 2);
    for layer in &layers {
        let limit = (6.0 / layer.fan_in() as f64).sqrt();
        let shape = layer.weight_shape();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-limit..limit))).collect();
        tensors.push(Tensor::from_vec(&shape, data)?);
        tensors.push(Tensor::zeros(&[layer.bias_len()]));
    }
    let zeros: Vec<Tensor<T>> = tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
    Ok(Network {
        spec: *spec,
        input_shape,
        layers,
        params: NetworkParams {
            tensors,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        },
        seed,
    })
}

impl<T: NetScalar> Network<T> {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn blocks(&self) -> usize {
        self.spec.blocks()
    }

    pub fn forward(&self, input: &[T]) -> Result<ForwardCache<T>, NetError> {
        if input.len() != self.input_len() {
            return Err(NetError::Shape(format!(
                "network input {:?} needs {} values, got {}",
                self.input_shape,
                self.input_len(),
                input.len()
            )));
        }
        let mut caches: Vec<LayerCache<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x: &[T] = match caches.last() {
                Some(c) => c.output(),
                None => input,
            };
            let (w, b) = (&self.params.tensors[2 * i], &self.params.tensors[2 * i + 1]);
            let cache = match layer {
                LayerDesc::Conv { shape, activation } => LayerCache::Conv(conv2d_forward(x, w, b, shape, *activation)?),
                LayerDesc::Dense { activation, .. } => {
                    let output = dense_forward(x, w, b, *activation)?;
                    LayerCache::Dense {
                        input: x.to_vec(),
                        output,
                    }
                }
            };
            caches.push(cache);
        }
        Ok(ForwardCache { layers: caches })
    }

    pub fn predict(&self, input: &[T]) -> Result<Vec<Pose5D<T>>, NetError> {
        let cache = self.forward(input)?;
        pose_head_forward(cache.raw_output(), self.blocks())
    }

    /// Back-propagates `raw_output_grad` (gradient with respect to the raw,
    /// pre-normalization outputs). Returns parameter gradients and, when
    /// requested, the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        raw_output_grad: &[T],
        want_input_grad: bool,
    ) -> (Gradients<T>, Vec<T>) {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.params.tensors.len()];
        let mut upstream = raw_output_grad.to_vec();
        for i in (0..self.layers.len()).rev() {
            let need_input = want_input_grad || i > 0;
            let w = &self.params.tensors[2 * i];
            let (dw, db, dx) = match (&self.layers[i], &cache.layers[i]) {
                (LayerDesc::Conv { shape, activation }, LayerCache::Conv(c)) => {
                    conv2d_backward(c, w, shape, *activation, &upstream, need_input)
                }
                (LayerDesc::Dense { activation, .. }, LayerCache::Dense { input: x, output }) => {
                    dense_backward(x, output, w, *activation, &upstream, need_input)
                }
                _ => unreachable!("cache does not match layer plan"),
            };
            grads[2 * i] = Some(dw);
            grads[2 * i + 1] = Some(db);
            upstream = dx;
        }
        (
            Gradients {
                tensors: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            },
            upstream,
        )
    }

    /// Forward, loss on the block selected by the head kind, and backward.
    pub fn loss_and_gradients(
        &self,
        input: &[T],
        target: &Pose5D<T>,
        class_id: usize,
        weights: LossWeights,
    ) -> Result<StepOutput<T>, NetError> {
        let cache = self.forward(input)?;
        let raw = cache.raw_output();
        let preds = pose_head_forward(raw, self.blocks())?;
        let (loss, pose_grads, prediction) = match self.spec.head {
            HeadKind::SingleBlock => {
                let (l, g) = pose_loss(&preds[0], target, weights);
                (l, vec![g], preds[0])
            }
            HeadKind::MultiBlock => {
                let (l, g) = masked_multiblock_loss(&preds, target, class_id, weights)?;
                (l, g, preds[class_id])
            }
        };
        let d_raw = pose_head_backward(raw, &pose_grads);
        let (gradients, _) = self.backward(&cache, &d_raw, false);
        Ok(StepOutput {
            loss,
            prediction,
            gradients,
        })
    }

    /// Loss only, for finite differences and evaluation.
    pub fn loss(&self, input: &[T], target: &Pose5D<T>, class_id: usize, weights: LossWeights) -> Result<T, NetError> {
        let preds = self.predict(input)?;
        let pred = match self.spec.head {
            HeadKind::SingleBlock => &preds[0],
            HeadKind::MultiBlock => preds.get(class_id).ok_or(NetError::ClassOutOfRange {
                class_id,
                blocks: preds.len(),
            })?,
        };
        Ok(pose_loss(pred, target, weights).0)
    }

    /// Prediction for a sample of class `class_id`: block 0 for single-block
    /// heads, block `class_id` otherwise.
    pub fn predict_for_class(&self, input: &[T], class_id: usize) -> Result<Pose5D<T>, NetError> {
        let preds = self.predict(input)?;
        match self.spec.head {
            HeadKind::SingleBlock => Ok(preds[0]),
            HeadKind::MultiBlock => preds.get(class_id).copied().ok_or(NetError::ClassOutOfRange {
                class_id,
                blocks: preds.len(),
            }),
        }
    }

    /// Spatial size of the feature map entering the fully-connected layers.
    pub fn feature_shape(&self) -> [usize; 3] {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                LayerDesc::Conv { shape, .. } => Some([shape.out_channels, shape.out_h(), shape.out_w()]),
                _ => None,
            })
            .unwrap_or(self.input_shape)
    }
}
