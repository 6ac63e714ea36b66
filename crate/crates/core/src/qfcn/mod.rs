//! Fully convolutional Q-networks: architecture description, forward and
//! backward passes, SGD, target copies and checkpoints.

pub mod arch;
pub mod checkpoint;
pub mod gradcheck;
pub mod network;
pub mod scalar;

pub use arch::{Architecture, LayerSpec, BN_MOMENTUM};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use network::{
    Backprop, BatchNormLayer, BatchStats, ConvLayer, Gradients, Layer, LayerGrad, Mode, Network, TargetNetwork, Tensor,
};
pub use scalar::Scalar;
