//! The four-module recurrent cascade, its parameters, and inference paths.

pub mod checkpoint;
pub mod config;
pub mod lstm;
pub mod network;
pub mod params;
pub mod streaming;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use config::{count_parameters, BlockSpec, Mode, ModelConfig};
pub use network::{backward, forward, forward_with_cache, ForwardCache};
pub use params::McNetParams;
pub use streaming::{streaming_step, StreamState};
