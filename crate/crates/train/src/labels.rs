//! Per-node mutation sensitivity labels.

use axcgp_core::mutation::mutate_node_uniform;
use axcgp_core::{Chromosome, Evaluator};
use rand::Rng;

/// Smallest normalized label.
pub const LABEL_FLOOR: f64 = 1.0 / 1024.0;

/// Default number of trial mutations per node.
pub const DEFAULT_TRIALS: usize = 8;

/// Raw sensitivity of every active node: the mean of `ln(e_i / e_0)` over
/// `trials` uniform single-gene mutations of that node, where `e_0` is the
/// unmutated WCE and every error is floored at 1.
pub fn raw_sensitivity<R: Rng + ?Sized>(
    c: &Chromosome,
    evaluator: &Evaluator,
    trials: usize,
    rng: &mut R,
) -> Vec<(usize, f64)> {
    assert!(trials > 0);
    let e0 = evaluator.metrics(c).wce.max(1) as f64;
    c.active()
        .positions()
        .iter()
        .map(|&p| {
            let sum: f64 = (0..trials)
                .map(|_| {
                    let (m, _) = mutate_node_uniform(c, p, rng);
                    let e = evaluator.metrics(&m).wce.max(1) as f64;
                    (e / e0).ln()
                })
                .sum();
            (p, sum / trials as f64)
        })
        .collect()
}

/// Affine rescale into (0, 1]: min to [`LABEL_FLOOR`], max to 1. A constant
/// vector maps to all ones.
pub fn normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|x| 1.0 - (1.0 - LABEL_FLOOR) * (max - x) / (max - min))
        .collect()
}

/// Normalized sensitivity labels indexed by node position; inactive nodes
/// get `None`.
pub fn sensitivity_labels<R: Rng + ?Sized>(
    c: &Chromosome,
    evaluator: &Evaluator,
    trials: usize,
    rng: &mut R,
) -> Vec<Option<f64>> {
    let raw = raw_sensitivity(c, evaluator, trials, rng);
    let values: Vec<f64> = raw.iter().map(|(_, s)| *s).collect();
    let mut out = vec![None; c.params().columns];
    for ((p, _), s) in raw.iter().zip(normalize(&values)) {
        out[*p] = Some(s);
    }
    out
}
