use axcgp_core::{CircuitParams, GateFunction};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Architecture of the mutation model. `inputs` and `nodes` tie a model to
/// one chromosome shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub c_par: f64,
    pub inputs: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("d_model {d_model} is not divisible by {heads} heads")]
    Heads { d_model: usize, heads: usize },
    #[error("d_model {0} cannot be split into input and function sub-embeddings")]
    Split(usize),
    #[error("{0} must be positive")]
    Zero(&'static str),
}

impl ModelConfig {
    pub fn new(params: &CircuitParams) -> Self {
        Self {
            d_model: 64,
            heads: 4,
            layers: 6,
            ffn_hidden: 256,
            c_par: 0.2,
            inputs: params.inputs,
            nodes: params.columns,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (v, name) in [
            (self.d_model, "d_model"),
            (self.heads, "heads"),
            (self.layers, "layers"),
            (self.ffn_hidden, "ffn_hidden"),
            (self.nodes, "nodes"),
            (self.inputs, "inputs"),
        ] {
            if v == 0 {
                return Err(ConfigError::Zero(name));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(ConfigError::Heads {
                d_model: self.d_model,
                heads: self.heads,
            });
        }
        if self.func_dim() == 0 || (self.d_model - self.func_dim()) % 2 != 0 {
            return Err(ConfigError::Split(self.d_model));
        }
        Ok(())
    }

    /// Width of the function sub-embedding (16 of 64).
    pub fn func_dim(&self) -> usize {
        self.d_model / 4
    }

    /// Width of each input sub-embedding (24 of 64).
    pub fn input_dim(&self) -> usize {
        (self.d_model - self.func_dim()) / 2
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Number of source-ID classes; also the input MASK token.
    pub fn sources(&self) -> usize {
        self.inputs + self.nodes
    }

    pub fn input_mask(&self) -> u32 {
        self.sources() as u32
    }

    pub fn func_mask(&self) -> u32 {
        GateFunction::COUNT as u32
    }

    pub fn fits(&self, params: &CircuitParams) -> bool {
        self.inputs == params.inputs && self.nodes == params.columns
    }
}
