//! Masked feature transformer with factorized temporal/spatial attention.

mod config;
mod layers;
mod mask;
mod model;
mod weights;

pub use config::{ForecasterConfig, ModelSize};
pub use layers::AttentionAxis;
pub use mask::{MaskPlan, MaskStrategy};
pub use model::{embed_tokens, forward, spatial_attention, temporal_attention, ForwardOutput};
pub use weights::{Attention, Block, ForecasterWeights, LayerNorm, Linear, Mlp};

pub(crate) use model::{backward_raw, forward_raw};
