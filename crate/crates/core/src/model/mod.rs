//! The assembled regressor and its checkpoint format.

mod checkpoint;
mod config;
mod network;
mod patch;

pub use checkpoint::Checkpoint;
pub use config::ModelConfig;
pub use network::{count_parameters, EncoderBlock, StochasticTransformer, TargetScaling};
pub use patch::{fourier_position_encoding, patchify, PatchSequence};
