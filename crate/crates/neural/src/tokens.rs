use axcgp_core::{Chromosome, GeneSlot};
use rand::seq::index;
use rand::Rng;

use crate::config::ModelConfig;

/// Per-node token triple. A token equal to the config's mask ID is masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedChromosome {
    pub in1: Vec<u32>,
    pub in2: Vec<u32>,
    pub func: Vec<u32>,
}

/// A masked gene: node position, slot and the original token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaskedGene {
    pub position: usize,
    pub slot: GeneSlot,
    pub value: u32,
}

impl TokenizedChromosome {
    pub fn new(c: &Chromosome) -> Self {
        let nodes = c.nodes();
        Self {
            in1: nodes.iter().map(|n| n.in1).collect(),
            in2: nodes.iter().map(|n| n.in2).collect(),
            func: nodes.iter().map(|n| n.func.gene()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.func.len()
    }

    pub fn is_empty(&self) -> bool {
        self.func.is_empty()
    }

    pub fn token(&self, position: usize, slot: GeneSlot) -> u32 {
        match slot {
            GeneSlot::In1 => self.in1[position],
            GeneSlot::In2 => self.in2[position],
            GeneSlot::Func => self.func[position],
        }
    }

    fn token_mut(&mut self, position: usize, slot: GeneSlot) -> &mut u32 {
        match slot {
            GeneSlot::In1 => &mut self.in1[position],
            GeneSlot::In2 => &mut self.in2[position],
            GeneSlot::Func => &mut self.func[position],
        }
    }

    /// Whether every token is in range for `cfg`.
    pub fn fits(&self, cfg: &ModelConfig) -> bool {
        self.len() == cfg.nodes
            && self.in1.len() == cfg.nodes
            && self.in2.len() == cfg.nodes
            && self.in1.iter().chain(&self.in2).all(|&t| t <= cfg.input_mask())
            && self.func.iter().all(|&t| t <= cfg.func_mask())
    }

    /// Node positions read by node `i` through unmasked input tokens,
    /// without duplicates.
    pub fn parents(&self, i: usize, cfg: &ModelConfig) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        for t in [self.in1[i], self.in2[i]] {
            if t == cfg.input_mask() || (t as usize) < cfg.inputs {
                continue;
            }
            let j = t as usize - cfg.inputs;
            if !out.contains(&j) {
                out.push(j);
            }
        }
        out
    }
}

/// Number of gene tokens masked at `ratio` out of `total`.
pub fn mask_count(ratio: f64, total: usize) -> usize {
    ((ratio * total as f64 - 1e-9).ceil() as usize).clamp(1, total)
}

/// Masks `ceil(ratio · 3 n_c)` gene tokens chosen uniformly without
/// replacement. Targets are returned in gene order.
pub fn mask<R: Rng + ?Sized>(
    tc: &TokenizedChromosome,
    cfg: &ModelConfig,
    ratio: f64,
    rng: &mut R,
) -> (TokenizedChromosome, Vec<MaskedGene>) {
    assert!(ratio > 0.0 && ratio < 1.0, "mask ratio {ratio} outside (0, 1)");
    let total = 3 * tc.len();
    let mut chosen = index::sample(rng, total, mask_count(ratio, total)).into_vec();
    chosen.sort_unstable();
    let mut masked = tc.clone();
    let targets = chosen
        .into_iter()
        .map(|g| {
            let position = g / 3;
            let slot = GeneSlot::ALL[g % 3];
            let value = tc.token(position, slot);
            *masked.token_mut(position, slot) = match slot {
                GeneSlot::Func => cfg.func_mask(),
                _ => cfg.input_mask(),
            };
            MaskedGene {
                position,
                slot,
                value,
            }
        })
        .collect();
    (masked, targets)
}
