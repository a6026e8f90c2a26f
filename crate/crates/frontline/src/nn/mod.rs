//! From-scratch convolutional network stack.
//!
//! A fixed layer menu with hand-written backward passes (no general
//! autograd): same-padded convolution, batch normalization, leaky ReLU, 2x2
//! max pooling, 4x4/stride-2 transposed convolution, sigmoid; MSE and BCE
//! losses; He initialization; Adam; an early-stopping training loop; and a
//! versioned checkpoint format. Every gradient is validated against central
//! finite differences in the test suite.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod tensor;
pub mod train;
pub mod unet;

pub use adam::AdamHyper;
pub use loss::{loss, LossKind};
pub use tensor::TensorGrid;
pub use train::{train, EpochStats, TrainConfig, TrainOutcome, TrainSample};
pub use unet::{he_init, ModelRole, ParameterSet, UNet, UNetConfig};
