//! Convolution and fully-connected layers on single samples.
//!
//! Activations are `[channels, height, width]` (or flat vectors for dense
//! layers). Convolutions use 3x3 kernels, valid padding and lower to GEMM via
//! im2col.

use crate::error::NetError;
use crate::scalar::NetScalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

/// Output side length of a valid-padding 3x3 convolution.
pub fn conv_output_size(input: usize, stride: usize) -> Option<usize> {
    if input < KERNEL || stride == 0 {
        None
    } else {
        Some((input - KERNEL) / stride + 1)
    }
}

/// Geometry of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub out_channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_h(&self) -> usize {
        conv_output_size(self.in_h, self.stride).unwrap_or(0)
    }

    pub fn out_w(&self) -> usize {
        conv_output_size(self.in_w, self.stride).unwrap_or(0)
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * KERNEL * KERNEL
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, KERNEL, KERNEL]
    }

    pub fn input_len(&self) -> usize {
        self.in_channels * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_h() * self.out_w()
    }
}

/// Saved state needed by [`conv2d_backward`].
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    pub cols: Vec<T>,
    pub output: Vec<T>,
}

fn im2col<T: NetScalar>(input: &[T], s: &ConvShape, cols: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let n = oh * ow;
    for c in 0..s.in_channels {
        let plane = &input[c * s.in_h * s.in_w..(c + 1) * s.in_h * s.in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let src_row = &plane[(oy * s.stride + ky) * s.in_w..];
                    let d = &mut dst[oy * ow..(oy + 1) * ow];
                    for (ox, v) in d.iter_mut().enumerate() {
                        *v = src_row[ox * s.stride + kx];
                    }
                }
            }
        }
    }
}

fn col2im<T: NetScalar>(cols: &[T], s: &ConvShape, input_grad: &mut [T]) {
    let (oh, ow) = (s.out_h(), s.out_w());
    let n = oh * ow;
    input_grad.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..s.in_channels {
        let plane = &mut input_grad[c * s.in_h * s.in_w..(c + 1) * s.in_h * s.in_w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * KERNEL + ky) * KERNEL + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..oh {
                    let base = (oy * s.stride + ky) * s.in_w + kx;
                    for ox in 0..ow {
                        plane[base + ox * s.stride] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}

fn check_len(what: &str, got: usize, expected: usize) -> Result<(), NetError> {
    if got != expected {
        return Err(NetError::Shape(format!("{what}: expected {expected} elements, got {got}")));
    }
    Ok(())
}

/// Valid-padding 3x3 cross-correlation with optional ReLU.
pub fn conv2d_forward<T: NetScalar>(
    input: &[T],
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    shape: &ConvShape,
    activation: Activation,
) -> Result<ConvCache<T>, NetError> {
    if shape.out_h() == 0 || shape.out_w() == 0 {
        return Err(NetError::Shape(format!(
            "conv input {}x{} smaller than the 3x3 kernel",
            shape.in_h, shape.in_w
        )));
    }
    check_len("conv input", input.len(), shape.input_len())?;
    if weights.shape() != shape.weight_shape() {
        return Err(NetError::Shape(format!(
            "conv weights {:?}, expected {:?}",
            weights.shape(),
            shape.weight_shape()
        )));
    }
    check_len("conv bias", bias.len(), shape.out_channels)?;
    let n = shape.out_h() * shape.out_w();
    let k = shape.patch_len();
    let mut cols = vec![T::zero(); k * n];
    im2col(input, shape, &mut cols);
    let mut output = vec![T::zero(); shape.out_channels * n];
    for (o, chunk) in output.chunks_mut(n).enumerate() {
        chunk.iter_mut().for_each(|v| *v = bias.data()[o]);
    }
    T::gemm(shape.out_channels, k, n, T::one(), weights.data(), false, &cols, false, T::one(), &mut output);
    if activation == Activation::Relu {
        relu_in_place(&mut output);
    }
    Ok(ConvCache { cols, output })
}

/// Gradients of a convolution layer. `output_grad` is taken with respect to
/// the layer output (after the activation). Returns `(dW, db, d_input)`;
/// `d_input` is empty when `want_input_grad` is false.
pub fn conv2d_backward<T: NetScalar>(
    cache: &ConvCache<T>,
    weights: &Tensor<T>,
    shape: &ConvShape,
    activation: Activation,
    output_grad: &[T],
    want_input_grad: bool,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let n = shape.out_h() * shape.out_w();
    let k = shape.patch_len();
    let mut pre_grad = output_grad.to_vec();
    if activation == Activation::Relu {
        relu_backward_in_place(&cache.output, &mut pre_grad);
    }
    let mut dw = Tensor::zeros(&shape.weight_shape());
    T::gemm(shape.out_channels, n, k, T::one(), &pre_grad, false, &cache.cols, true, T::zero(), dw.data_mut());
    let mut db = Tensor::zeros(&[shape.out_channels]);
    for (o, chunk) in pre_grad.chunks(n).enumerate() {
        db.data_mut()[o] = chunk.iter().copied().sum();
    }
    let mut d_input = Vec::new();
    if want_input_grad {
        let mut dcols = vec![T::zero(); k * n];
        T::gemm(k, shape.out_channels, n, T::one(), weights.data(), true, &pre_grad, false, T::zero(), &mut dcols);
        d_input = vec![T::zero(); shape.input_len()];
        col2im(&dcols, shape, &mut d_input);
    }
    (dw, db, d_input)
}

/// `y = W x + b`, `W` of shape `[out, in]`.
pub fn dense_forward<T: NetScalar>(
    input: &[T],
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Vec<T>, NetError> {
    let [out, inp] = match weights.shape() {
        [o, i] => [*o, *i],
        s => return Err(NetError::Shape(format!("dense weights must be 2-D, got {s:?}"))),
    };
    check_len("dense input", input.len(), inp)?;
    check_len("dense bias", bias.len(), out)?;
    let mut y = bias.data().to_vec();
    T::gemm(out, inp, 1, T::one(), weights.data(), false, input, false, T::one(), &mut y);
    if activation == Activation::Relu {
        relu_in_place(&mut y);
    }
    Ok(y)
}

/// Returns `(dW, db, d_input)`.
pub fn dense_backward<T: NetScalar>(
    input: &[T],
    output: &[T],
    weights: &Tensor<T>,
    activation: Activation,
    output_grad: &[T],
    want_input_grad: bool,
) -> (Tensor<T>, Tensor<T>, Vec<T>) {
    let (out, inp) = (weights.shape()[0], weights.shape()[1]);
    let mut pre_grad = output_grad.to_vec();
    if activation == Activation::Relu {
        relu_backward_in_place(output, &mut pre_grad);
    }
    let mut dw = Tensor::zeros(&[out, inp]);
    T::gemm(out, 1, inp, T::one(), &pre_grad, false, input, false, T::zero(), dw.data_mut());
    let db = Tensor::from_vec(&[out], pre_grad.clone()).expect("bias shape");
    let mut d_input = Vec::new();
    if want_input_grad {
        d_input = vec![T::zero(); inp];
        T::gemm(inp, out, 1, T::one(), weights.data(), true, &pre_grad, false, T::zero(), &mut d_input);
    }
    (dw, db, d_input)
}

pub fn relu_in_place<T: NetScalar>(x: &mut [T]) {
    for v in x.iter_mut() {
        if !(*v > T::zero()) {
            *v = T::zero();
        }
    }
}

/// Zeroes gradient entries whose ReLU output is not positive.
pub fn relu_backward_in_place<T: NetScalar>(output: &[T], grad: &mut [T]) {
    for (g, o) in grad.iter_mut().zip(output) {
        if !(*o > T::zero()) {
            *g = T::zero();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(c: usize, o: usize, h: usize, w: usize, stride: usize) -> ConvShape {
        ConvShape {
            in_channels: c,
            out_channels: o,
            in_h: h,
            in_w: w,
            stride,
        }
    }

    #[test]
    fn constant_field() {
        let s = shape(1, 1, 5, 5, 2);
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0f64; 9]).unwrap();
        let b = Tensor::from_vec(&[1], vec![0.5]).unwrap();
        let out = conv2d_forward(&[1.0; 25], &w, &b, &s, Activation::None).unwrap();
        assert_eq!((s.out_h(), s.out_w()), (2, 2));
        assert_eq!(out.output, vec![9.5; 4]);
    }

    #[test]
    fn impulse_kernel_samples_input() {
        let s = shape(1, 1, 7, 7, 2);
        let mut k = vec![0.0f64; 9];
        k[4] = 1.0; // center tap
        let w = Tensor::from_vec(&[1, 1, 3, 3], k).unwrap();
        let b = Tensor::zeros(&[1]);
        let input: Vec<f64> = (0..49).map(|v| v as f64).collect();
        let out = conv2d_forward(&input, &w, &b, &s, Activation::None).unwrap();
        // outputs at input rows/cols 1, 3, 5
        let expect: Vec<f64> = [1, 3, 5]
            .iter()
            .flat_map(|&y| [1, 3, 5].map(move |x| (y * 7 + x) as f64))
            .collect();
        assert_eq!(out.output, expect);
    }

    #[test]
    fn stride_chain_80() {
        let sizes: Vec<usize> = std::iter::successors(Some(80), |&s| conv_output_size(s, 2)).take(4).collect();
        assert_eq!(sizes, vec![80, 39, 19, 9]);
        assert_eq!(conv_output_size(2, 2), None);
    }

    #[test]
    fn relu_zeroes_negative_gradient() {
        let s = shape(1, 1, 3, 3, 1);
        let w = Tensor::from_vec(&[1, 1, 3, 3], vec![-1.0f64; 9]).unwrap();
        let b = Tensor::zeros(&[1]);
        let cache = conv2d_forward(&[1.0; 9], &w, &b, &s, Activation::Relu).unwrap();
        assert_eq!(cache.output, vec![0.0]);
        let (dw, db, dx) = conv2d_backward(&cache, &w, &s, Activation::Relu, &[1.0], true);
        assert_eq!(dw.max_abs(), 0.0);
        assert_eq!(db.max_abs(), 0.0);
        assert!(dx.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn shape_errors() {
        let s = shape(2, 1, 5, 5, 1);
        let w = Tensor::<f64>::zeros(&[1, 2, 3, 3]);
        let b = Tensor::zeros(&[1]);
        assert!(conv2d_forward(&[0.0; 10], &w, &b, &s, Activation::None).is_err());
        let bad_w = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        assert!(conv2d_forward(&[0.0; 50], &bad_w, &b, &s, Activation::None).is_err());
        let tiny = shape(1, 1, 2, 2, 1);
        assert!(conv2d_forward(&[0.0; 4], &bad_w, &b, &tiny, Activation::None).is_err());
        assert!(dense_forward(&[0.0; 3], &Tensor::<f64>::zeros(&[2, 4]), &Tensor::zeros(&[2]), Activation::None).is_err());
    }

    #[test]
    fn dense_matches_manual() {
        let w = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2], vec![0.5, -0.5]).unwrap();
        let y = dense_forward(&[1.0f64, 1.0, 2.0], &w, &b, Activation::None).unwrap();
        assert_eq!(y, vec![9.5, 0.5]);
        let (dw, db, dx) = dense_backward(&[1.0, 1.0, 2.0], &y, &w, Activation::None, &[1.0, 2.0], true);
        assert_eq!(dw.data(), &[1.0, 1.0, 2.0, 2.0, 2.0, 4.0]);
        assert_eq!(db.data(), &[1.0, 2.0]);
        assert_eq!(dx, vec![-1.0, 2.0, 5.0]);
    }
}
