//! Transformer mutation model: tokenization, forward and backward passes,
//! parameter storage and checkpoints.

pub mod config;
pub mod model;
pub mod params;
pub mod tokens;

pub use config::{ConfigError, ModelConfig};
pub use model::{mutation_distribution, softmax, ModelOutput, OutputGrad, Transformer};
pub use params::{read_checkpoint, write_checkpoint, CheckpointError, ParamStore, Tensor};
pub use tokens::{mask, mask_count, MaskedGene, TokenizedChromosome};
