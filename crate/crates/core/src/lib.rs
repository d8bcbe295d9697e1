//! Residual attention convolutional classifier for binary image classification.

pub mod data;
pub mod error;
pub mod explain;
pub mod gradcheck;
mod kernels;
pub mod metrics;
pub mod net;
pub mod plot;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{build_network, AttentionForm, AttentionModuleConfig, AttentionNetConfig, Network, ParamStore};
pub use tape::{BatchNormState, Gradients, Mode, Tape, Var};
pub use tensor::Tensor;

pub use data::{Gray, Sample};
pub use metrics::{ConfusionMatrix, ScoredSample};
pub use train::{EpochRecord, OptimizerConfig, OptimizerKind, TrainConfig};
