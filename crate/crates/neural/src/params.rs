//! Named parameter tensors and the checkpoint container.

use std::io::{self, BufRead, Write};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ModelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![0.0; n],
        }
    }
}

/// Flat collection of named tensors. Used both for parameters and for
/// their gradients, which share names and shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    tensors: Vec<Tensor>,
}

pub(crate) const EMB_IN1: usize = 0;
pub(crate) const EMB_IN2: usize = 1;
pub(crate) const EMB_FUNC: usize = 2;
pub(crate) const EMB_POS: usize = 3;
const LAYER_BASE: usize = 4;
const PER_LAYER: usize = 16;

/// Offsets of the tensors inside one encoder block.
#[derive(Debug, Clone, Copy)]
pub(crate) enum LayerParam {
    Ln1Gain = 0,
    Ln1Bias,
    Wq,
    Bq,
    Wk,
    Bk,
    Wv,
    Bv,
    Wo,
    Bo,
    Ln2Gain,
    Ln2Bias,
    W1,
    B1,
    W2,
    B2,
}

/// Tensors after the last block.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TopParam {
    LnGain = 0,
    LnBias,
    FuncW,
    FuncB,
    InputW,
    InputB,
    SensW,
    SensB,
}

pub(crate) fn layer_index(layer: usize, p: LayerParam) -> usize {
    LAYER_BASE + layer * PER_LAYER + p as usize
}

pub(crate) fn top_index(cfg: &ModelConfig, p: TopParam) -> usize {
    LAYER_BASE + cfg.layers * PER_LAYER + p as usize
}

fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.d_model;
    let f = cfg.ffn_hidden;
    let mut v = vec![
        ("embed.in1".to_string(), vec![cfg.sources() + 1, cfg.input_dim()]),
        ("embed.in2".to_string(), vec![cfg.sources() + 1, cfg.input_dim()]),
        ("embed.func".to_string(), vec![cfg.func_mask() as usize + 1, cfg.func_dim()]),
        ("embed.pos".to_string(), vec![cfg.nodes, d]),
    ];
    for l in 0..cfg.layers {
        for (name, shape) in [
            ("ln1.gain", vec![d]),
            ("ln1.bias", vec![d]),
            ("attn.wq", vec![d, d]),
            ("attn.bq", vec![d]),
            ("attn.wk", vec![d, d]),
            ("attn.bk", vec![d]),
            ("attn.wv", vec![d, d]),
            ("attn.bv", vec![d]),
            ("attn.wo", vec![d, d]),
            ("attn.bo", vec![d]),
            ("ln2.gain", vec![d]),
            ("ln2.bias", vec![d]),
            ("ffn.w1", vec![d, f]),
            ("ffn.b1", vec![f]),
            ("ffn.w2", vec![f, d]),
            ("ffn.b2", vec![d]),
        ] {
            v.push((format!("layer{l}.{name}"), shape));
        }
    }
    let n_func = cfg.func_mask() as usize;
    v.extend([
        ("final_ln.gain".to_string(), vec![d]),
        ("final_ln.bias".to_string(), vec![d]),
        ("head.func.w".to_string(), vec![d, n_func]),
        ("head.func.b".to_string(), vec![n_func]),
        ("head.input.w".to_string(), vec![d, cfg.sources()]),
        ("head.input.b".to_string(), vec![cfg.sources()]),
        ("head.sens.w".to_string(), vec![d, 1]),
        ("head.sens.b".to_string(), vec![1]),
    ]);
    v
}

impl ParamStore {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        Self {
            tensors: layout(cfg)
                .into_iter()
                .map(|(n, s)| Tensor::zeros(n, s))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    /// Embeddings and head weights ~ N(0, 0.02²), block matrices
    /// ~ N(0, 1/fan_in) with output projections scaled down by
    /// sqrt(2 · layers), layer-norm gains 1, biases 0.
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let mut s = Self::zeros(cfg);
        let depth = (2.0 * cfg.layers as f64).sqrt();
        for t in &mut s.tensors {
            let short = t.name.rsplit('.').next().unwrap_or("");
            let std = if t.name.starts_with("embed.") || t.name.starts_with("head.") && short == "w" {
                0.02
            } else if short.starts_with('w') {
                let fan_in = t.shape[0] as f64;
                let base = fan_in.powf(-0.5);
                if short == "wo" || short == "w2" {
                    base / depth
                } else {
                    base
                }
            } else {
                if short == "gain" {
                    t.data.fill(1.0);
                }
                continue;
            };
            let normal = Normal::new(0.0, std).expect("finite std");
            for x in &mut t.data {
                *x = normal.sample(rng);
            }
        }
        s
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub(crate) fn m(&self, i: usize) -> ArrayView2<'_, f64> {
        let t = &self.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("matrix shape")
    }

    pub(crate) fn v(&self, i: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub(crate) fn m_mut(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let t = &mut self.tensors[i];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("matrix shape")
    }

    pub(crate) fn v_mut(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.tensors[i].data[..])
    }

    pub fn fill(&mut self, value: f64) {
        for t in &mut self.tensors {
            t.data.fill(value);
        }
    }

    /// `self += scale · other`.
    pub fn add_scaled(&mut self, other: &ParamStore, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += scale * y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= s;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| &t.data)
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|x| x.is_finite())
    }
}

const MAGIC: &str = "axcgp-transformer v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a model checkpoint (bad magic line)")]
    Magic,
    #[error("bad header: {0}")]
    Header(#[from] serde_json::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("tensor {name}: expected shape {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("trailing bytes after the last tensor")]
    Trailing,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<(String, Vec<usize>)>,
}

/// Writes a magic line, a JSON header line, then every tensor as
/// little-endian f64 in header order.
pub fn write_checkpoint<W: Write>(mut w: W, cfg: &ModelConfig, params: &ParamStore) -> io::Result<()> {
    let header = Header {
        config: cfg.clone(),
        tensors: params
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect(),
    };
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "{}", serde_json::to_string(&header).map_err(io::Error::other)?)?;
    for t in &params.tensors {
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()
}

pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<(ModelConfig, ParamStore), CheckpointError> {
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != MAGIC {
        return Err(CheckpointError::Magic);
    }
    line.clear();
    r.read_line(&mut line)?;
    let header: Header = serde_json::from_str(line.trim_end())?;
    header.config.validate()?;
    let mut params = ParamStore::zeros(&header.config);
    if header.tensors.len() != params.tensors.len() {
        return Err(CheckpointError::Shape {
            name: "<tensor count>".into(),
            expected: vec![params.tensors.len()],
            found: vec![header.tensors.len()],
        });
    }
    let mut buf = [0u8; 8];
    for (t, (name, shape)) in params.tensors.iter_mut().zip(&header.tensors) {
        if &t.name != name || &t.shape != shape {
            return Err(CheckpointError::Shape {
                name: name.clone(),
                expected: t.shape.clone(),
                found: shape.clone(),
            });
        }
        for x in &mut t.data {
            r.read_exact(&mut buf)?;
            *x = f64::from_le_bytes(buf);
        }
    }
    if r.read(&mut buf)? != 0 {
        return Err(CheckpointError::Trailing);
    }
    Ok((header.config, params))
}
