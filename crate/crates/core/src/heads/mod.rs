//! Slide-level classification: the feed-forward head and the three tile
//! aggregation strategies.

pub mod attention_pool;
pub mod classifier;
pub mod soft_vote;
pub mod tile_transformer;

pub use attention_pool::{AttentionPool, AttentionPoolConfig};
pub use classifier::{ClassifierHead, HeadConfig};
pub use soft_vote::{soft_vote, soft_vote_backward};
pub use tile_transformer::{TileTransformer, TileTransformerConfig};
