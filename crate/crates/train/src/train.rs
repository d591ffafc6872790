//! Curriculum-masked training loop with Adam.

use axcgp_core::canonical::{augment_with_map, rerandomize_inactive};
use axcgp_core::Chromosome;
use axcgp_neural::{mask, ParamStore, TokenizedChromosome, Transformer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::loss::{total_loss, LossBreakdown, LossTargets, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub mask_start: f64,
    pub mask_end: f64,
    pub weights: LossWeights,
    pub lr: f64,
    pub clip: f64,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch: 128,
            mask_start: 0.05,
            mask_end: 0.30,
            weights: LossWeights::default(),
            lr: 1e-3,
            clip: 1.0,
            rng_seed: 0,
        }
    }
}

/// Mask ratio of 1-based `epoch`, linear from `start` to `end`.
pub fn mask_ratio(epoch: usize, epochs: usize, start: f64, end: f64) -> f64 {
    if epochs <= 1 {
        return start;
    }
    start + (end - start) * (epoch - 1) as f64 / (epochs - 1) as f64
}

/// A training example: transformer-form chromosome, attractiveness and a
/// label for every active node position.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub chromosome: Chromosome,
    pub attractiveness: f64,
    pub labels: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub mask_ratio: f64,
    /// Mean over the epoch's samples.
    pub loss: LossBreakdown,
}

pub const TRACE_HEADER: &str = "epoch,L_op,L_input,L_sens,P_conf_op,P_conf_in,L_total";

pub fn trace_csv(trace: &[EpochLoss]) -> String {
    let mut s = format!("{TRACE_HEADER}\n");
    for e in trace {
        let l = &e.loss;
        s.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            e.epoch, l.l_op, l.l_input, l.l_sens, l.p_conf_op, l.p_conf_in, l.l_total
        ));
    }
    s
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty training set")]
    Empty,
    #[error("record {0}: chromosome does not fit the model")]
    Shape(usize),
    #[error("loss diverged at step {step}")]
    Diverged { step: usize },
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamStore,
    v: ParamStore,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let tensors = params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grads` down to global norm `max_norm` if it is larger.
pub fn clip_grad_norm(grads: &mut ParamStore, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Augments a record (topological shuffle plus fresh inactive nodes),
/// masks it, and builds the loss targets.
pub fn prepare_sample<R: Rng + ?Sized>(
    record: &TrainRecord,
    model: &Transformer,
    ratio: f64,
    rng: &mut R,
) -> (TokenizedChromosome, LossTargets) {
    let (shuffled, map) = augment_with_map(&record.chromosome, rng);
    let c = rerandomize_inactive(&shuffled, rng);
    let mut labels = vec![None; map.len()];
    for (p, l) in record.labels.iter().enumerate() {
        labels[map[p]] = *l;
    }
    let truth = TokenizedChromosome::new(&c);
    let (masked, genes) = mask(&truth, model.config(), ratio, rng);
    let active: Vec<usize> = c.active().positions().to_vec();
    let sensitivity = active.iter().map(|&p| labels[p].unwrap_or(1.0)).collect();
    (
        masked,
        LossTargets {
            truth,
            masked: genes,
            active,
            sensitivity,
        },
    )
}

/// Samples processed together between deterministic reductions.
const CHUNK: usize = 16;

/// Loss and accumulated gradient of one mini-batch (mean over samples).
pub fn batch_gradient(
    model: &Transformer,
    samples: &[(TokenizedChromosome, LossTargets, f64)],
    weights: &LossWeights,
) -> (LossBreakdown, ParamStore) {
    let mut grads = model.params().zeros_like();
    let mut loss = LossBreakdown::default();
    let k = 1.0 / samples.len() as f64;
    for chunk in samples.chunks(CHUNK) {
        let parts: Vec<(LossBreakdown, ParamStore)> = chunk
            .par_iter()
            .map(|(tokens, targets, a_hat)| {
                let (out, cache) = model.forward_cached(tokens);
                let (b, g) = total_loss(&out, targets, *a_hat, weights);
                let mut pg = model.params().zeros_like();
                model.backward(tokens, &out, &cache, &g, &mut pg);
                (b, pg)
            })
            .collect();
        for (b, g) in parts {
            loss.add_scaled(&b, k);
            grads.add_scaled(&g, k);
        }
    }
    (loss, grads)
}

/// Trains `model` in place. Returns the per-epoch mean losses; `on_epoch`
/// sees each entry as soon as it is complete.
pub fn train(
    model: &mut Transformer,
    data: &[TrainRecord],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLoss),
) -> Result<Vec<EpochLoss>, TrainError> {
    if data.is_empty() {
        return Err(TrainError::Empty);
    }
    if let Some(i) = data.iter().position(|r| !model.config().fits(r.chromosome.params())) {
        return Err(TrainError::Shape(i));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let ratio = mask_ratio(epoch, cfg.epochs, cfg.mask_start, cfg.mask_end);
        order.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        for batch in order.chunks(cfg.batch.max(1)) {
            step += 1;
            let max_a = batch
                .iter()
                .map(|&i| data[i].attractiveness)
                .fold(f64::MIN_POSITIVE, f64::max);
            let samples: Vec<_> = batch
                .iter()
                .map(|&i| {
                    let mut srng = ChaCha8Rng::seed_from_u64(rng.gen());
                    let (tokens, targets) = prepare_sample(&data[i], model, ratio, &mut srng);
                    (tokens, targets, data[i].attractiveness / max_a)
                })
                .collect();
            let (loss, mut grads) = batch_gradient(model, &samples, &cfg.weights);
            if !loss.all_finite() || !grads.all_finite() {
                return Err(TrainError::Diverged { step });
            }
            clip_grad_norm(&mut grads, cfg.clip);
            adam.step(model.params_mut(), &grads);
            if !model.params().all_finite() {
                return Err(TrainError::Diverged { step });
            }
            epoch_loss.add_scaled(&loss, batch.len() as f64 / data.len() as f64);
        }
        let e = EpochLoss {
            epoch,
            mask_ratio: ratio,
            loss: epoch_loss,
        };
        log::info!("epoch {epoch}: mask {ratio:.3}, loss {:.6}", epoch_loss.l_total);
        on_epoch(&e);
        trace.push(e);
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_schedule_is_linear() {
        assert_eq!(mask_ratio(1, 20, 0.05, 0.30), 0.05);
        assert!((mask_ratio(20, 20, 0.05, 0.30) - 0.30).abs() < 1e-15);
        let mut prev = 0.0;
        for e in 1..=20 {
            let r = mask_ratio(e, 20, 0.05, 0.30);
            assert!(r >= prev);
            prev = r;
        }
        assert_eq!(mask_ratio(1, 1, 0.05, 0.30), 0.05);
    }
}
