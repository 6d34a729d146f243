//! Regression by residual-quantization code generation.
//!
//! Continuous targets are discretized into coarse-to-fine code sequences by
//! an exact 1-D residual k-means codebook ([`quantizer`]); an LSTM
//! ([`model`]) learns to emit those codes and per-step values, trained with a
//! likelihood + Huber + rank-contrastive objective ([`losses`],
//! [`training`]); [`eval`] scores regression and ranking quality.

pub mod baseline;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod losses;
pub mod model;
pub mod numerics;
pub mod params;
pub mod quantizer;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use numerics::{Graph, Tensor, Var};
pub use scalar::{Precision, Scalar};

pub use model::{ModelConfig, ModelParams};
pub use quantizer::{ClusterMethod, Codebook};
pub use training::{RqModel, TrainConfig};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type RqModel32 = RqModel<f32>;
pub type RqModel64 = RqModel<f64>;
