pub mod autonet;
pub mod channel;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod impairment;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = autonet::Tensor<f32>;
pub type Tensor64 = autonet::Tensor<f64>;
pub type IqBuffer32 = dsp::IqBuffer<f32>;
pub type IqBuffer64 = dsp::IqBuffer<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
