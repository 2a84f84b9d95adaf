//! Minimal dense-array network core: tensors, layers with analytic
//! backward passes, losses, Adam and a step learning-rate schedule.

pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{Conv1d, ConvGeometry, Dense, GlobalAvgPool, Layer, MaxPool1d, Relu};
pub use loss::{bce_with_logits, sigmoid, softmax_ce_loss, softmax_rows};
pub use optim::{Adam, StepLr};
pub use tensor::Tensor;
