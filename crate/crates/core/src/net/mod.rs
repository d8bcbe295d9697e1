//! The residual attention classifier.

mod config;
pub mod container;
pub mod layers;
mod model;
mod params;

pub use config::{AttentionForm, AttentionModuleConfig, AttentionNetConfig};
pub use layers::{
    attention_module_forward, combine, mask_branch_forward, mask_logits_forward, residual_unit_forward,
    AttentionOutput, LayerCtx, Recording,
};
pub use model::{build_network, Forward, ForwardOutput, Network};
pub use params::ParamStore;
