//! Batch execution of paired runs and the statistics used to compare them.

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::canonical::{canonicalize_outputs, CanonicalizeError};
use crate::chromosome::Chromosome;
use crate::eval::Evaluator;
use crate::search::{evolve, ConstrainedArea, MutationModel, RunLog, SearchConfig, SearchError};
use crate::seeds::SeedKind;

/// Five-number summary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(BoxStats {
        n: v.len(),
        min: v[0],
        q1: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// The best (smallest) `ceil(fraction · n)` values, at least one.
pub fn top_fraction(values: &[f64], fraction: f64) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let keep = ((fraction * v.len() as f64 - 1e-9).ceil() as usize).clamp(1, v.len().max(1));
    v.truncate(keep);
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// One-sided p-value for "first sample tends to be smaller".
    pub p: f64,
    pub exact: bool,
}

fn midranks(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut all: Vec<(f64, usize)> = x
        .iter()
        .map(|&v| (v, 0))
        .chain(y.iter().map(|&v| (v, 1)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut ranks = vec![0.0; all.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].fill(r);
        ties.push(j - i + 1);
        i = j + 1;
    }
    let rx = all
        .iter()
        .zip(&ranks)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, r)| *r)
        .collect();
    (rx, ties)
}

/// Number of rank arrangements giving each U value, for sizes `m`, `n`.
fn u_counts(m: usize, n: usize) -> Vec<f64> {
    // table[i][j][u] via rolling over i.
    let max_u = m * n;
    let mut prev: Vec<Vec<f64>> = (0..=n)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for i in 1..=m {
        let mut cur: Vec<Vec<f64>> = vec![vec![0.0; max_u + 1]; n + 1];
        cur[0][0] = 1.0;
        for j in 1..=n {
            for u in 0..=i * j {
                let mut c = cur[j - 1][u];
                if u >= j {
                    c += prev[j][u - j];
                }
                cur[j][u] = c;
            }
        }
        prev = cur;
    }
    prev.swap_remove(n)
}

/// One-sided Mann-Whitney U test of `x < y` (stochastically).
///
/// Exact without ties for small samples, otherwise the tie-corrected normal
/// approximation with continuity correction.
pub fn mann_whitney_less(x: &[f64], y: &[f64]) -> MannWhitney {
    let (n1, n2) = (x.len(), y.len());
    assert!(n1 > 0 && n2 > 0, "Mann-Whitney needs non-empty samples");
    let (rx, ties) = midranks(x, y);
    let u = rx.iter().sum::<f64>() - (n1 * (n1 + 1)) as f64 / 2.0;
    let has_ties = ties.iter().any(|&t| t > 1);
    if !has_ties && n1 * n2 <= 2500 {
        let counts = u_counts(n1, n2);
        let total: f64 = counts.iter().sum();
        let below: f64 = counts[..=(u.round() as usize)].iter().sum();
        return MannWhitney {
            u,
            p: (below / total).min(1.0),
            exact: true,
        };
    }
    let n = (n1 + n2) as f64;
    let mean = (n1 * n2) as f64 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (u - mean + 0.5) / var.sqrt();
        Normal::standard().cdf(z).min(1.0)
    };
    MannWhitney { u, p, exact: false }
}

/// One labeled configuration of a batch comparison.
pub struct Arm<'a> {
    pub label: String,
    pub config: SearchConfig,
    pub model: Option<&'a (dyn MutationModel + Sync)>,
}

pub struct BatchRun {
    pub arm: usize,
    pub run: usize,
    pub seed_kind: SeedKind,
    pub best: Chromosome,
    pub log: RunLog,
}

#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("no seeds given")]
    NoSeeds,
    #[error(transparent)]
    Canonicalize(#[from] CanonicalizeError),
    #[error("arm {label}, run {run}: {source}")]
    Run {
        label: String,
        run: usize,
        source: SearchError,
    },
}

/// Per-run RNG seed shared by all arms so runs are paired.
pub fn run_seed(base: u64, run: usize) -> u64 {
    base ^ (run as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Executes `runs` independent runs for every arm.
///
/// Run `r` of every arm starts from seed `r mod seeds.len()` (converted to
/// transformer form) with the same RNG seed. Runs execute in parallel on
/// the current rayon pool; results come back in (arm, run) order.
pub fn run_batch(
    arms: &[Arm<'_>],
    runs: usize,
    seeds: &[(SeedKind, Chromosome)],
    evaluator: &Evaluator,
    base_seed: u64,
) -> Result<Vec<BatchRun>, BatchError> {
    if seeds.is_empty() {
        return Err(BatchError::NoSeeds);
    }
    let seeds: Vec<(SeedKind, Chromosome)> = seeds
        .iter()
        .map(|(k, c)| Ok((*k, canonicalize_outputs(c)?)))
        .collect::<Result<_, CanonicalizeError>>()?;
    let jobs: Vec<(usize, usize)> = (0..arms.len())
        .flat_map(|a| (0..runs).map(move |r| (a, r)))
        .collect();
    jobs.par_iter()
        .map(|&(a, r)| {
            let arm = &arms[a];
            let (kind, seed) = &seeds[r % seeds.len()];
            let cfg = SearchConfig {
                rng_seed: run_seed(base_seed, r),
                ..arm.config.clone()
            };
            let objective = ConstrainedArea {
                evaluator,
                eps_abs: cfg.eps_abs,
            };
            let (best, log) = evolve(seed, &objective, &cfg, arm.model).map_err(|source| BatchError::Run {
                label: arm.label.clone(),
                run: r,
                source,
            })?;
            Ok(BatchRun {
                arm: a,
                run: r,
                seed_kind: *kind,
                best,
                log,
            })
        })
        .collect()
}

/// Areas (µm²) of every run's best individual at time `t`.
pub fn areas_at(logs: &[&RunLog], t: f64) -> Vec<f64> {
    logs.iter()
        .filter_map(|l| l.fitness_at(t).and_then(|f| f.area()))
        .map(|a| a.um2())
        .collect()
}

pub const DECILE_HEADER: &str = "t_sec,label,n_runs,n_top,min,q1,median,q3,max";
pub const PVALUE_HEADER: &str = "t_sec,label_a,label_b,n_a,n_b,u_b,p_b_less_a";
pub const SCATTER_HEADER: &str = "label,run,wce,area";

/// Top-decile box statistics per checkpoint, one CSV row per label.
pub fn decile_csv(groups: &[(&str, Vec<&RunLog>)], checkpoints: &[f64]) -> String {
    let mut s = format!("{DECILE_HEADER}\n");
    for &t in checkpoints {
        for (label, logs) in groups {
            let all = areas_at(logs, t);
            let top = top_fraction(&all, 0.1);
            if let Some(b) = box_stats(&top) {
                s.push_str(&format!(
                    "{t},{label},{},{},{:.2},{:.4},{:.4},{:.4},{:.2}\n",
                    all.len(),
                    b.n,
                    b.min,
                    b.q1,
                    b.median,
                    b.q3,
                    b.max
                ));
            }
        }
    }
    s
}

/// One-sided U tests that `b`'s top decile has lower area than `a`'s.
pub fn compare_at(a: &[&RunLog], b: &[&RunLog], t: f64) -> Option<(usize, usize, MannWhitney)> {
    let ta = top_fraction(&areas_at(a, t), 0.1);
    let tb = top_fraction(&areas_at(b, t), 0.1);
    if ta.is_empty() || tb.is_empty() {
        return None;
    }
    Some((ta.len(), tb.len(), mann_whitney_less(&tb, &ta)))
}

pub fn pvalue_csv(a: (&str, &[&RunLog]), b: (&str, &[&RunLog]), checkpoints: &[f64]) -> String {
    let mut s = format!("{PVALUE_HEADER}\n");
    for &t in checkpoints {
        if let Some((na, nb, mw)) = compare_at(a.1, b.1, t) {
            s.push_str(&format!("{t},{},{},{na},{nb},{},{:.6e}\n", a.0, b.0, mw.u, mw.p));
        }
    }
    s
}

/// Final (wce, area) of every run.
pub fn scatter_csv(groups: &[(&str, Vec<&RunLog>)]) -> String {
    let mut s = format!("{SCATTER_HEADER}\n");
    for (label, logs) in groups {
        for (i, l) in logs.iter().enumerate() {
            if let Some(e) = l.final_entry() {
                s.push_str(&format!("{label},{i},{},{}\n", e.wce, e.area));
            }
        }
    }
    s
}
