//! Minimal tensor engine for the EMI regression network: convolution, batch
//! normalization, ReLU, the L2 loss and Adam, each with an exact backward
//! pass. Everything runs in `f64` on one thread.

pub mod act;
pub mod adam;
pub mod conv;
pub mod model;
pub mod norm;
pub mod tensor;
pub mod train;

pub use act::{relu, relu_backward};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, Padding};
pub use model::{model_forward, CnnConfig, CnnModel, ForwardCache, Gradients, InferenceStats};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNorm, Mode};
pub use tensor::Tensor;
pub use train::{mse_loss, train, TrainHyper, TrainReport};
