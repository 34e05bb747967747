//! Neural-network building blocks with explicit backward passes.

pub mod layers;
pub mod optim;
pub mod params;
pub mod transformer;

pub use layers::{gelu, sigmoid, BatchNorm, Init, LayerNorm, Linear, Mode};
pub use optim::AdamW;
pub use params::Params;
pub use transformer::{Block, SelfAttention};
