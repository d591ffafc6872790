//! Exact multiplier netlists used to initialize evolution.
//!
//! Operand `a` occupies inputs `0..k` (LSB first), operand `b` inputs
//! `k..2k`; output bit `j` is product bit `j`.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chromosome::{Chromosome, CircuitParams, Node, SignalId};
use crate::gate::GateFunction::{self, *};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SeedKind {
    RippleCarryArray,
    CarrySaveArray1,
    CarrySaveArray2,
    Wallace1,
    Wallace2,
    Wallace3,
}

impl SeedKind {
    pub const ALL: [SeedKind; 6] = [
        SeedKind::RippleCarryArray,
        SeedKind::CarrySaveArray1,
        SeedKind::CarrySaveArray2,
        SeedKind::Wallace1,
        SeedKind::Wallace2,
        SeedKind::Wallace3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeedKind::RippleCarryArray => "ripple-carry-array",
            SeedKind::CarrySaveArray1 => "carry-save-array-1",
            SeedKind::CarrySaveArray2 => "carry-save-array-2",
            SeedKind::Wallace1 => "wallace-1",
            SeedKind::Wallace2 => "wallace-2",
            SeedKind::Wallace3 => "wallace-3",
        }
    }
}

impl fmt::Display for SeedKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SeedKind {
    type Err = SeedError;
    fn from_str(s: &str) -> Result<Self, SeedError> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| SeedError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeedError {
    #[error("unknown seed kind {0:?}")]
    UnknownKind(String),
    #[error("bit width {0} not supported (2..=8)")]
    Width(u32),
    #[error("{kind} at {bits} bits needs {gates} nodes, only {columns} columns")]
    DoesNotFit {
        kind: SeedKind,
        bits: u32,
        gates: usize,
        columns: usize,
    },
}

/// Node budget used when none is given: 600 at 8 bits, scaled
/// quadratically for narrower operands.
pub fn default_columns(bits: u32) -> usize {
    match bits {
        8 => 600,
        b => (600 * (b * b) as usize).div_ceil(64).max(24),
    }
}

#[derive(Clone, Copy)]
enum AdderStyle {
    /// XOR sum, AND/OR carry.
    Plain,
    /// XOR sum, NAND-NAND carry.
    Nand,
    /// XNOR sum, majority carry built from AND/OR.
    Xnor,
}

struct Netlist {
    inputs: usize,
    gates: Vec<Node>,
    zero: Option<SignalId>,
}

impl Netlist {
    fn new(inputs: usize) -> Self {
        Self {
            inputs,
            gates: Vec::new(),
            zero: None,
        }
    }

    fn gate(&mut self, func: GateFunction, a: SignalId, b: SignalId) -> SignalId {
        self.gates.push(Node::new(a, b, func));
        (self.inputs + self.gates.len() - 1) as SignalId
    }

    fn zero(&mut self) -> SignalId {
        if let Some(z) = self.zero {
            return z;
        }
        let z = self.gate(Xor, 0, 0);
        self.zero = Some(z);
        z
    }

    fn half_adder(&mut self, a: SignalId, b: SignalId) -> (SignalId, SignalId) {
        (self.gate(Xor, a, b), self.gate(And, a, b))
    }

    fn full_adder(&mut self, style: AdderStyle, a: SignalId, b: SignalId, c: SignalId) -> (SignalId, SignalId) {
        match style {
            AdderStyle::Plain => {
                let t = self.gate(Xor, a, b);
                let s = self.gate(Xor, t, c);
                let g = self.gate(And, a, b);
                let p = self.gate(And, t, c);
                (s, self.gate(Or, g, p))
            }
            AdderStyle::Nand => {
                let t = self.gate(Xor, a, b);
                let s = self.gate(Xor, t, c);
                let g = self.gate(Nand, a, b);
                let p = self.gate(Nand, t, c);
                (s, self.gate(Nand, g, p))
            }
            AdderStyle::Xnor => {
                let t = self.gate(Xnor, a, b);
                let s = self.gate(Xnor, t, c);
                let g = self.gate(And, a, b);
                let o = self.gate(Or, a, b);
                let p = self.gate(And, o, c);
                (s, self.gate(Or, g, p))
            }
        }
    }

    /// Adds up to three bits of one column, returning sum and optional carry.
    fn reduce(&mut self, style: AdderStyle, bits: &[SignalId]) -> (SignalId, Option<SignalId>) {
        match *bits {
            [a] => (a, None),
            [a, b] => {
                let (s, c) = self.half_adder(a, b);
                (s, Some(c))
            }
            [a, b, c] => {
                let (s, co) = self.full_adder(style, a, b, c);
                (s, Some(co))
            }
            _ => unreachable!("column reduction takes one to three bits"),
        }
    }

    /// Ripple-carry merge of columns holding at most two bits each.
    fn final_adder(&mut self, style: AdderStyle, cols: &[Vec<SignalId>], width: usize) -> Vec<SignalId> {
        let mut out = Vec::with_capacity(width);
        let mut carry: Option<SignalId> = None;
        for w in 0..width {
            let mut bits = cols.get(w).cloned().unwrap_or_default();
            assert!(bits.len() <= 2);
            bits.extend(carry.take());
            if bits.is_empty() {
                out.push(self.zero());
                continue;
            }
            let (s, c) = self.reduce(style, &bits);
            out.push(s);
            carry = c;
        }
        out
    }
}

fn partial_products(n: &mut Netlist, k: usize) -> Vec<Vec<SignalId>> {
    let mut cols = vec![Vec::new(); 2 * k];
    // Row-major generation keeps rows contiguous in the netlist.
    for j in 0..k {
        for i in 0..k {
            let pp = n.gate(And, i as SignalId, (k + j) as SignalId);
            cols[i + j].push(pp);
        }
    }
    cols
}

fn ripple_carry_array(n: &mut Netlist, k: usize) -> Vec<SignalId> {
    let mut acc: Vec<SignalId> = Vec::new();
    for j in 0..k {
        let row: Vec<SignalId> = (0..k)
            .map(|i| n.gate(And, i as SignalId, (k + j) as SignalId))
            .collect();
        let mut carry = None;
        for (i, &y) in row.iter().enumerate() {
            let w = i + j;
            let (s, c) = match (acc.get(w).copied(), carry) {
                (Some(x), Some(c)) => {
                    let (s, co) = n.full_adder(AdderStyle::Plain, x, y, c);
                    (s, Some(co))
                }
                (Some(x), None) => {
                    let (s, co) = n.half_adder(x, y);
                    (s, Some(co))
                }
                (None, Some(c)) => {
                    let (s, co) = n.half_adder(y, c);
                    (s, Some(co))
                }
                (None, None) => (y, None),
            };
            if w < acc.len() {
                acc[w] = s;
            } else {
                acc.push(s);
            }
            carry = c;
        }
        if let Some(c) = carry {
            acc.push(c);
        }
    }
    while acc.len() < 2 * k {
        let z = n.zero();
        acc.push(z);
    }
    acc.truncate(2 * k);
    acc
}

fn carry_save_array(n: &mut Netlist, k: usize, style: AdderStyle) -> Vec<SignalId> {
    let mut cols: Vec<Vec<SignalId>> = vec![Vec::new(); 2 * k + 1];
    for j in 0..k {
        let mut carries = Vec::new();
        for i in 0..k {
            let w = i + j;
            let pp = n.gate(And, i as SignalId, (k + j) as SignalId);
            let mut bits = std::mem::take(&mut cols[w]);
            bits.push(pp);
            let (s, c) = n.reduce(style, &bits);
            cols[w].push(s);
            if let Some(c) = c {
                carries.push((w + 1, c));
            }
        }
        for (w, c) in carries {
            cols[w].push(c);
        }
    }
    n.final_adder(style, &cols, 2 * k)
}

fn wallace(n: &mut Netlist, k: usize, style: AdderStyle) -> Vec<SignalId> {
    let mut cols = partial_products(n, k);
    cols.push(Vec::new());
    while cols.iter().any(|c| c.len() > 2) {
        let mut next: Vec<Vec<SignalId>> = vec![Vec::new(); cols.len() + 1];
        for (w, col) in cols.iter().enumerate() {
            if col.len() <= 2 {
                next[w].extend_from_slice(col);
                continue;
            }
            for chunk in col.chunks(3) {
                let (s, c) = n.reduce(style, chunk);
                next[w].push(s);
                if let Some(c) = c {
                    next[w + 1].push(c);
                }
            }
        }
        cols = next;
    }
    n.final_adder(style, &cols, 2 * k)
}

fn dadda(n: &mut Netlist, k: usize, style: AdderStyle) -> Vec<SignalId> {
    let mut cols = partial_products(n, k);
    cols.push(Vec::new());
    let mut targets = vec![2usize];
    while *targets.last().unwrap() < k {
        let d = *targets.last().unwrap();
        targets.push(d * 3 / 2);
    }
    for &target in targets.iter().rev() {
        let mut carry_in: Vec<SignalId> = Vec::new();
        for w in 0..cols.len() {
            let mut col = std::mem::take(&mut cols[w]);
            col.append(&mut carry_in);
            let mut carry_out = Vec::new();
            while col.len() > target {
                let excess = col.len() - target;
                let take = if excess >= 2 { 3 } else { 2 };
                let bits: Vec<SignalId> = col.drain(..take).collect();
                let (s, c) = n.reduce(style, &bits);
                col.push(s);
                carry_out.extend(c);
            }
            cols[w] = col;
            carry_in = carry_out;
        }
        if !carry_in.is_empty() {
            cols.push(carry_in);
        }
    }
    n.final_adder(style, &cols, 2 * k)
}

/// Builds an exact `bits`-bit multiplier of the given architecture with
/// explicit output genes, padded to `columns` nodes.
///
/// Unused node slots are filled with deterministic pseudo-random inactive
/// nodes.
pub fn seed_multiplier(kind: SeedKind, bits: u32, columns: usize) -> Result<Chromosome, SeedError> {
    if !(2..=8).contains(&bits) {
        return Err(SeedError::Width(bits));
    }
    let k = bits as usize;
    let mut n = Netlist::new(2 * k);
    let outputs = match kind {
        SeedKind::RippleCarryArray => ripple_carry_array(&mut n, k),
        SeedKind::CarrySaveArray1 => carry_save_array(&mut n, k, AdderStyle::Plain),
        SeedKind::CarrySaveArray2 => carry_save_array(&mut n, k, AdderStyle::Nand),
        SeedKind::Wallace1 => wallace(&mut n, k, AdderStyle::Plain),
        SeedKind::Wallace2 => dadda(&mut n, k, AdderStyle::Plain),
        SeedKind::Wallace3 => wallace(&mut n, k, AdderStyle::Xnor),
    };
    let params = CircuitParams::multiplier(bits, columns);
    if n.gates.len() > columns || columns < params.outputs {
        return Err(SeedError::DoesNotFit {
            kind,
            bits,
            gates: n.gates.len(),
            columns,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + 16 * kind as u64 + bits as u64);
    let mut nodes = n.gates;
    for p in nodes.len()..columns {
        nodes.push(Node::random(&params, p, &mut rng));
    }
    Ok(Chromosome::from_parts_unchecked(params, nodes, Some(outputs)))
}
