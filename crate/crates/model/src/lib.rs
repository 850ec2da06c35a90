//! Neural editing-program generator with its own reverse-mode autodiff.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod gradcheck;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use config::{Config, ConfigError, ModelConfig, RewardKind, TrainConfig};
pub use model::{Decoded, Decoding, Glossifier, ModelError, StatementDistribution, Step, Transcription};
