//! Exhaustive bit-parallel simulation, error metrics and constrained fitness.
//!
//! Input assignments are packed 64 per machine word. Row `i` of a `k`-bit
//! multiplier assigns input bit `j` to `(i >> j) & 1`, so `a = i mod 2^k`
//! and `b = i >> k`.

use std::fmt;
use std::ops::ControlFlow;

use crate::chromosome::{Chromosome, SignalId};
use crate::gate::{Area, GateFunction};

const LANES: usize = 64;

/// Packed input lanes for an arbitrary list of input rows.
#[derive(Debug, Clone)]
pub struct VectorSet {
    inputs: usize,
    rows: Vec<u32>,
    /// `words × inputs`, word-major.
    lanes: Vec<u64>,
}

impl VectorSet {
    pub fn new(inputs: usize, rows: Vec<u32>) -> Self {
        let words = rows.len().div_ceil(LANES);
        let mut lanes = vec![0u64; words * inputs];
        for (r, &row) in rows.iter().enumerate() {
            let (w, l) = (r / LANES, r % LANES);
            for j in 0..inputs {
                lanes[w * inputs + j] |= ((row as u64 >> j) & 1) << l;
            }
        }
        Self {
            inputs,
            rows,
            lanes,
        }
    }

    /// All `2^inputs` rows in counting order.
    pub fn exhaustive(inputs: usize) -> Self {
        assert!(inputs <= 24, "exhaustive simulation limited to 24 inputs");
        Self::new(inputs, (0..1u32 << inputs).collect())
    }

    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn words(&self) -> usize {
        self.rows.len().div_ceil(LANES)
    }

    fn lanes_in_word(&self, w: usize) -> usize {
        (self.rows.len() - w * LANES).min(LANES)
    }
}

/// Active gates flattened into straight-line code over signal slots.
struct Program {
    ops: Vec<(GateFunction, u32, u32, u32)>,
    outputs: Vec<SignalId>,
    signals: usize,
    inputs: usize,
}

impl Program {
    fn compile(c: &Chromosome) -> Self {
        let params = c.params();
        let ops = c
            .active()
            .positions()
            .iter()
            .map(|&p| {
                let n = c.node(p);
                (n.func, n.in1, n.in2, params.node_id(p))
            })
            .collect();
        Self {
            ops,
            outputs: c.output_ids(),
            signals: params.signals(),
            inputs: params.inputs,
        }
    }

    /// Simulates word by word, handing each word's output lanes to `visit`.
    fn run<F>(&self, set: &VectorSet, mut visit: F)
    where
        F: FnMut(usize, &[u64]) -> ControlFlow<()>,
    {
        assert_eq!(set.inputs, self.inputs);
        let mut sig = vec![0u64; self.signals];
        let mut outs = vec![0u64; self.outputs.len()];
        for w in 0..set.words() {
            sig[..self.inputs].copy_from_slice(&set.lanes[w * self.inputs..(w + 1) * self.inputs]);
            for &(f, a, b, dst) in &self.ops {
                sig[dst as usize] = f.eval_word(sig[a as usize], sig[b as usize]);
            }
            for (o, &id) in outs.iter_mut().zip(&self.outputs) {
                *o = sig[id as usize];
            }
            if visit(w, &outs).is_break() {
                break;
            }
        }
    }
}

/// Transposes bit-sliced output words into per-lane integers.
#[inline]
fn decode_word(outs: &[u64], lanes: usize, vals: &mut [u64; LANES]) {
    vals[..lanes].fill(0);
    let mask = if lanes == LANES { u64::MAX } else { (1u64 << lanes) - 1 };
    for (j, &word) in outs.iter().enumerate() {
        let mut bits = word & mask;
        while bits != 0 {
            let l = bits.trailing_zeros() as usize;
            vals[l] |= 1 << j;
            bits &= bits - 1;
        }
    }
}

/// Exact products `a·b` for every row of a `bits`-bit multiplier.
pub fn golden_products(bits: u32) -> Vec<u64> {
    assert!((1..=12).contains(&bits));
    let mask = (1u64 << bits) - 1;
    (0..1u64 << (2 * bits))
        .map(|i| (i & mask) * (i >> bits))
        .collect()
}

/// Decimal output value of `c` for every one of the `2^n_i` input rows.
pub fn simulate_exhaustive(c: &Chromosome) -> Vec<u64> {
    let set = VectorSet::exhaustive(c.params().inputs);
    simulate_set(c, &set)
}

/// Output values for the rows of `set`, in row order.
pub fn simulate_set(c: &Chromosome, set: &VectorSet) -> Vec<u64> {
    assert!(c.params().outputs <= 64);
    let program = Program::compile(c);
    let mut out = Vec::with_capacity(set.len());
    let mut vals = [0u64; LANES];
    program.run(set, |w, outs| {
        let lanes = set.lanes_in_word(w);
        decode_word(outs, lanes, &mut vals);
        out.extend_from_slice(&vals[..lanes]);
        ControlFlow::Continue(())
    });
    out
}

/// Error of an approximate multiplier against the exact products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ErrorMetrics {
    /// Worst-case absolute error over all rows.
    pub wce: u64,
    /// Sum of absolute errors; the mean is `abs_sum / rows`.
    pub abs_sum: u64,
    pub rows: u64,
    /// Worst-case error over rows with a zero operand.
    pub wce_zr: u64,
}

impl ErrorMetrics {
    pub fn mae(&self) -> f64 {
        if self.rows == 0 {
            0.0
        } else {
            self.abs_sum as f64 / self.rows as f64
        }
    }
}

/// Computes WCE, MAE and zero-operand WCE from exhaustive output tables.
pub fn error_metrics(outputs: &[u64], golden: &[u64], bits: u32) -> ErrorMetrics {
    assert_eq!(outputs.len(), golden.len());
    assert_eq!(outputs.len(), 1 << (2 * bits));
    let mask = (1u64 << bits) - 1;
    let mut m = ErrorMetrics {
        rows: outputs.len() as u64,
        ..Default::default()
    };
    for (i, (&o, &g)) in outputs.iter().zip(golden).enumerate() {
        let d = o.abs_diff(g);
        m.wce = m.wce.max(d);
        m.abs_sum += d;
        let i = i as u64;
        if i & mask == 0 || i >> bits == 0 {
            m.wce_zr = m.wce_zr.max(d);
        }
    }
    m
}

/// Absolute WCE threshold for a percentage of the full output range
/// `2^{2k} - 1`.
pub fn epsilon_abs(percent: f64, bits: u32) -> u64 {
    assert!((0.0..=100.0).contains(&percent), "percent out of [0, 100]");
    let range = ((1u64 << (2 * bits)) - 1) as f64;
    (percent * range / 100.0).floor() as u64
}

/// Constrained-area fitness: the active area when the circuit meets the
/// error constraints, infinity otherwise. Lower is better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fitness {
    Finite(Area),
    Infinite,
}

impl Fitness {
    pub fn is_finite(self) -> bool {
        matches!(self, Fitness::Finite(_))
    }

    pub fn area(self) -> Option<Area> {
        match self {
            Fitness::Finite(a) => Some(a),
            Fitness::Infinite => None,
        }
    }
}

impl fmt::Display for Fitness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fitness::Finite(a) => a.fmt(f),
            Fitness::Infinite => f.write_str("inf"),
        }
    }
}

/// Outcome of one fitness evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Evaluation {
    pub fitness: Fitness,
    /// Full metrics; always present for a finite fitness.
    pub metrics: Option<ErrorMetrics>,
    /// Input rows actually simulated.
    pub rows_simulated: u64,
}

/// Per-bit-width evaluator with precomputed vector sets.
///
/// Zero-operand rows (`2·2^k - 1` of them) are kept apart so that candidates
/// violating the exact-zero constraint are rejected cheaply.
#[derive(Debug, Clone)]
pub struct Evaluator {
    bits: u32,
    golden: Vec<u64>,
    full: VectorSet,
    zero: VectorSet,
    nonzero: VectorSet,
}

impl Evaluator {
    pub fn new(bits: u32) -> Self {
        assert!((2..=8).contains(&bits), "bit width must be in 2..=8");
        let inputs = 2 * bits as usize;
        let mask = (1u32 << bits) - 1;
        let (zero_rows, other_rows): (Vec<u32>, Vec<u32>) =
            (0..1u32 << inputs).partition(|&i| i & mask == 0 || i >> bits == 0);
        Self {
            bits,
            golden: golden_products(bits),
            full: VectorSet::exhaustive(inputs),
            zero: VectorSet::new(inputs, zero_rows),
            nonzero: VectorSet::new(inputs, other_rows),
        }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn golden(&self) -> &[u64] {
        &self.golden
    }

    pub fn rows(&self) -> u64 {
        self.golden.len() as u64
    }

    pub fn zero_rows(&self) -> &VectorSet {
        &self.zero
    }

    fn check(&self, c: &Chromosome) {
        assert!(
            c.params().is_multiplier() && c.params().bits == self.bits,
            "chromosome is not a {}-bit multiplier",
            self.bits
        );
    }

    pub fn simulate(&self, c: &Chromosome) -> Vec<u64> {
        self.check(c);
        simulate_set(c, &self.full)
    }

    /// Exhaustive error metrics.
    pub fn metrics(&self, c: &Chromosome) -> ErrorMetrics {
        error_metrics(&self.simulate(c), &self.golden, self.bits)
    }

    /// Scans `set`, accumulating |error|; stops as soon as the running
    /// maximum exceeds `limit`. Returns (max, sum, rows simulated, aborted).
    fn scan(&self, program: &Program, set: &VectorSet, limit: u64) -> (u64, u64, u64, bool) {
        let (mut max, mut sum, mut rows, mut aborted) = (0u64, 0u64, 0u64, false);
        let mut vals = [0u64; LANES];
        program.run(set, |w, outs| {
            let lanes = set.lanes_in_word(w);
            decode_word(outs, lanes, &mut vals);
            let base = w * LANES;
            for (l, &v) in vals[..lanes].iter().enumerate() {
                let d = v.abs_diff(self.golden[set.rows[base + l] as usize]);
                max = max.max(d);
                sum += d;
            }
            rows += lanes as u64;
            if max > limit {
                aborted = true;
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        });
        (max, sum, rows, aborted)
    }

    /// Staged fitness evaluation.
    ///
    /// 1. With a parent area given, a larger candidate is rejected unsimulated.
    /// 2. Zero-operand rows must be exact.
    /// 3. Remaining rows must stay within `eps_abs`.
    ///
    /// The fitness equals [`Evaluator::fitness_unstaged`] whenever no parent
    /// area is given, or the candidate is no larger than the parent.
    pub fn fitness(&self, c: &Chromosome, eps_abs: u64, parent_area: Option<Area>) -> Evaluation {
        self.check(c);
        let reject = |rows| Evaluation {
            fitness: Fitness::Infinite,
            metrics: None,
            rows_simulated: rows,
        };
        let active = c.active();
        let area = c.area_of(&active);
        if parent_area.is_some_and(|p| area > p) {
            return reject(0);
        }
        let program = Program::compile(c);
        let (zmax, zsum, zrows, zabort) = self.scan(&program, &self.zero, 0);
        if zabort || zmax != 0 {
            return reject(zrows);
        }
        let (max, sum, rows, abort) = self.scan(&program, &self.nonzero, eps_abs);
        if abort {
            return reject(zrows + rows);
        }
        Evaluation {
            fitness: Fitness::Finite(area),
            metrics: Some(ErrorMetrics {
                wce: max.max(zmax),
                abs_sum: sum + zsum,
                rows: self.rows(),
                wce_zr: zmax,
            }),
            rows_simulated: zrows + rows,
        }
    }

    /// Reference evaluation: full simulation, then the constraints.
    pub fn fitness_unstaged(&self, c: &Chromosome, eps_abs: u64) -> Evaluation {
        let m = self.metrics(c);
        let fitness = if m.wce <= eps_abs && m.wce_zr == 0 {
            Fitness::Finite(c.area())
        } else {
            Fitness::Infinite
        };
        Evaluation {
            fitness,
            metrics: Some(m),
            rows_simulated: self.rows(),
        }
    }
}
