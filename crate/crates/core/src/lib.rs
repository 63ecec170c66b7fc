//! Stochastic Transformer for audio severity-score regression.

pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod training;
pub mod verify;

pub use config::RunConfig;
pub use data::{CorpusIndex, Example, Split, SyntheticSpec};
pub use dsp::{AudioSignal, FeatureConfig, MfccMatrix};
pub use error::{Error, Result};
pub use metrics::EvalReport;
pub use model::{Checkpoint, ModelConfig, StochasticTransformer};
pub use training::{TrainConfig, TrainReport};
