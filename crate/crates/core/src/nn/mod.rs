//! Small convolutional network framework: SAME 3x3 convolutions with elu,
//! 2x2 average pooling, dense layers, the asymmetric Gaussian head, reverse
//! mode gradients and Adam.

mod gemm;
pub mod gradcheck;
pub mod head;
pub mod layers;
pub mod model;
pub mod network;
pub mod tensor;
pub mod train;

pub use gradcheck::{grad_check, grad_check_at, GradCheckReport};
pub use head::{asym_gauss_nll, asym_gauss_pdf, custom_activation, HeadOutput, SPREAD_FLOOR};
pub use layers::{avg_pool_2x2, conv2d_same, elu};
pub use model::{CnnModel, LabelScaler, Prediction};
pub use network::{Activation, LayerSpec, Network, NetworkSpec, ParamShape, HEAD_WIDTH};
pub use tensor::Tensor;
pub use train::{batch_gradient, mean_loss, train, EpochRecord, History, Split, TrainConfig};
