//! Convolutional 5D pose regressor written from scratch: layers with analytic
//! gradients, an L2-normalized quaternion head, single- and multi-block
//! variants, the weighted pose loss, Adam, checkpoints and a finite-difference
//! gradient checker.

pub mod adam;
pub mod arch;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod loss;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use adam::{adam_step, AdamConfig};
pub use arch::{
    build_architecture, layer_plan, ArchitectureSpec, ForwardCache, Gradients, HeadKind, LayerDesc, Network,
    NetworkParams, StepOutput, Variant,
};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use error::NetError;
pub use gradcheck::{run_gradcheck, GradCheckConfig, GradCheckReport};
pub use head::{pose_head_backward, pose_head_forward, PoseGrad, BLOCK_WIDTH};
pub use layers::{conv2d_backward, conv2d_forward, conv_output_size, dense_backward, dense_forward, Activation, ConvShape};
pub use loss::{masked_multiblock_loss, pose_loss, LossWeights};
pub use scalar::NetScalar;
pub use tensor::Tensor;
pub use train::{
    evaluate, evaluate_samples, fit, sample_error, train, EpochRecord, Metrics, SampleError, TrainConfig,
    TrainSample, TrainingCurves, TrainingData,
};

/// Single-precision network, the training default.
pub type Networkf = Network<f32>;
/// Double-precision network, used for gradient checks.
pub type Network64 = Network<f64>;
pub type Tensorf = Tensor<f32>;
pub type TrainingDataf = TrainingData<f32>;
