//! Offspring generators: uniform single-point mutation and guided mutation.

use rand::Rng;
use thiserror::Error;

use crate::chromosome::{Chromosome, GeneSlot};
use crate::gate::GateFunction;

/// One applied point mutation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mutation {
    pub position: usize,
    pub slot: GeneSlot,
    pub old: u32,
    pub new: u32,
}

/// Sampling plan for guided mutation.
///
/// `location` has one entry per node position. `function[p]` is a
/// distribution over the gate set, `input[p]` a distribution over the
/// source IDs `0..n_i + p` that node `p` may read (shared by both inputs).
#[derive(Debug, Clone, PartialEq)]
pub struct MutationDistribution {
    pub location: Vec<f64>,
    pub function: Vec<[f64; GateFunction::COUNT]>,
    pub input: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistributionError {
    #[error("distribution covers {found} nodes, chromosome has {expected}")]
    Shape { expected: usize, found: usize },
    #[error("node {position}: input distribution has {found} entries, expected {expected}")]
    InputSupport {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("{what} is not a probability vector (sum {sum})")]
    NotNormalized { what: String, sum: f64 },
}

fn check_normalized(v: &[f64], what: impl FnOnce() -> String) -> Result<(), DistributionError> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(DistributionError::NotNormalized { what: what(), sum });
    }
    Ok(())
}

impl MutationDistribution {
    /// Uniform over active nodes, gate functions and permissible inputs.
    pub fn uniform(c: &Chromosome) -> Self {
        let params = c.params();
        let active = c.active();
        let mut location = vec![0.0; params.columns];
        if active.is_empty() {
            location.fill(1.0 / params.columns as f64);
        } else {
            for &p in active.positions() {
                location[p] = 1.0 / active.len() as f64;
            }
        }
        let function = vec![[1.0 / GateFunction::COUNT as f64; GateFunction::COUNT]; params.columns];
        let input = (0..params.columns)
            .map(|p| {
                let n = params.node_id(p) as usize;
                vec![1.0 / n as f64; n]
            })
            .collect();
        Self {
            location,
            function,
            input,
        }
    }

    /// Checks shapes and that every vector is a probability distribution.
    pub fn check(&self, c: &Chromosome) -> Result<(), DistributionError> {
        let params = c.params();
        let n = params.columns;
        for found in [self.location.len(), self.function.len(), self.input.len()] {
            if found != n {
                return Err(DistributionError::Shape { expected: n, found });
            }
        }
        check_normalized(&self.location, || "location".into())?;
        for p in 0..n {
            check_normalized(&self.function[p], || format!("function[{p}]"))?;
            let expected = params.node_id(p) as usize;
            if self.input[p].len() != expected {
                return Err(DistributionError::InputSupport {
                    position: p,
                    expected,
                    found: self.input[p].len(),
                });
            }
            check_normalized(&self.input[p], || format!("input[{p}]"))?;
        }
        Ok(())
    }
}

/// Draws an index proportionally to non-negative weights; `None` when the
/// total mass is zero.
pub fn sample_weighted<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut x = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if x < w {
                return Some(i);
            }
            x -= w;
            last = Some(i);
        }
    }
    last
}

/// Uniform draw from `0..n` excluding `current`.
fn uniform_other<R: Rng + ?Sized>(n: u32, current: u32, rng: &mut R) -> u32 {
    debug_assert!(n >= 2 && current < n);
    let r = rng.gen_range(0..n - 1);
    if r >= current {
        r + 1
    } else {
        r
    }
}

fn slot_support(c: &Chromosome, position: usize, slot: GeneSlot) -> u32 {
    match slot {
        GeneSlot::Func => GateFunction::COUNT as u32,
        GeneSlot::In1 | GeneSlot::In2 => c.params().node_id(position),
    }
}

fn apply(c: &Chromosome, position: usize, slot: GeneSlot, new: u32) -> (Chromosome, Mutation) {
    let old = c.gene(position, slot);
    debug_assert_ne!(old, new);
    let child = c
        .with_gene(position, slot, new)
        .expect("replacement drawn from permissible values");
    (
        child,
        Mutation {
            position,
            slot,
            old,
            new,
        },
    )
}

/// Changes one uniformly chosen gene of node `position` to a uniformly
/// chosen different permissible value.
pub fn mutate_node_uniform<R: Rng + ?Sized>(
    parent: &Chromosome,
    position: usize,
    rng: &mut R,
) -> (Chromosome, Mutation) {
    let mut slot = GeneSlot::ALL[rng.gen_range(0..3)];
    if slot != GeneSlot::Func && slot_support(parent, position, slot) < 2 {
        // Only one source exists for this node; the function is the only
        // gene that can change.
        slot = GeneSlot::Func;
    }
    let new = uniform_other(
        slot_support(parent, position, slot),
        parent.gene(position, slot),
        rng,
    );
    apply(parent, position, slot, new)
}

/// Standard CGP point mutation: one gene of one uniformly chosen active node.
pub fn mutate_uniform<R: Rng + ?Sized>(parent: &Chromosome, rng: &mut R) -> (Chromosome, Mutation) {
    let active = parent.active();
    let position = if active.is_empty() {
        rng.gen_range(0..parent.params().columns)
    } else {
        active.positions()[rng.gen_range(0..active.len())]
    };
    mutate_node_uniform(parent, position, rng)
}

/// Guided point mutation.
///
/// The node comes from `dist.location`, the gene is chosen uniformly, and
/// the replacement is drawn from that node's function or input distribution
/// restricted to permissible values other than the current one. Zero mass
/// on every alternative falls back to a uniform choice.
pub fn mutate_guided<R: Rng + ?Sized>(
    parent: &Chromosome,
    dist: &MutationDistribution,
    rng: &mut R,
) -> (Chromosome, Mutation) {
    let position = match sample_weighted(&dist.location, rng) {
        Some(p) => p,
        None => {
            log::debug!("degenerate location distribution, sampling uniformly");
            return mutate_uniform(parent, rng);
        }
    };
    let slot = GeneSlot::ALL[rng.gen_range(0..3)];
    let support = slot_support(parent, position, slot);
    let current = parent.gene(position, slot);
    if support < 2 {
        return mutate_node_uniform(parent, position, rng);
    }
    let mut weights: Vec<f64> = match slot {
        GeneSlot::Func => dist.function[position].to_vec(),
        GeneSlot::In1 | GeneSlot::In2 => {
            let mut w = dist.input[position].clone();
            w.resize(support as usize, 0.0);
            w
        }
    };
    weights[current as usize] = 0.0;
    let new = match sample_weighted(&weights, rng) {
        Some(v) => v as u32,
        None => {
            log::debug!("no mass on alternatives at node {position} {slot:?}, sampling uniformly");
            uniform_other(support, current, rng)
        }
    };
    apply(parent, position, slot, new)
}
