//! Numerics, optical projection simulation and feedback-alignment trainers
//! for small dense networks.

pub mod activation;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod mlp;
pub mod opu;
pub mod optim;
pub mod rng;
pub mod stats;
pub mod tensor;
pub mod trace;

pub use activation::{activate, activation_derivative, ActivationKind};
pub use error::{Error, Result};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::{apply_update, cosine_learning_rate, OptimizerSpec, OptimizerState};
pub use stats::{cosine_similarity, pearson_correlation};
pub use tensor::{affine_forward, Tensor};
