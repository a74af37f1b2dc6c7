//! Sparse pre-training and dense fine-tuning of GPT language models.
//!
//! The numeric core ([`tensor`], [`ops`], [`model`], [`optim`]) is generic
//! over [`Scalar`] (`f32` or `f64`); training, checkpoints and the experiment
//! harness run in `f32`.

pub mod data;
pub mod error;
pub mod flops;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod scalar;
pub mod sparsity;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type GptModel32 = model::GptModel<f32>;
pub type GptModel64 = model::GptModel<f64>;
pub type OptState32 = optim::OptState<f32>;
pub type OptState64 = optim::OptState<f64>;
