//! Single-row CGP genotype of a feed-forward gate-level circuit.
//!
//! Signal IDs number the primary inputs `0..n_i` followed by the nodes
//! `n_i..n_i + n_c`, so node position `p` has ID `n_i + p`. A node may only
//! read IDs below its own.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::gate::{Area, GateFunction};

/// Signal identifier: a primary input or a node.
pub type SignalId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CircuitParams {
    /// Operand width of the multiplier.
    pub bits: u32,
    pub inputs: usize,
    pub outputs: usize,
    pub columns: usize,
}

impl CircuitParams {
    /// Parameters of a `bits`-bit multiplier (`2·bits` inputs and outputs).
    pub fn multiplier(bits: u32, columns: usize) -> Self {
        let width = 2 * bits as usize;
        Self {
            bits,
            inputs: width,
            outputs: width,
            columns,
        }
    }

    /// Total number of addressable signals.
    pub fn signals(&self) -> usize {
        self.inputs + self.columns
    }

    pub fn node_id(&self, position: usize) -> SignalId {
        (self.inputs + position) as SignalId
    }

    /// Position of a node ID, `None` for primary inputs.
    pub fn position_of(&self, id: SignalId) -> Option<usize> {
        (id as usize).checked_sub(self.inputs)
    }

    /// Number of gene integers, with or without the output genes.
    pub fn gene_count(&self, with_outputs: bool) -> usize {
        3 * self.columns + if with_outputs { self.outputs } else { 0 }
    }

    /// Returns true when this describes a multiplier the evaluator can check.
    pub fn is_multiplier(&self) -> bool {
        self.inputs == 2 * self.bits as usize && self.outputs == self.inputs
    }

    fn check(&self) -> Result<(), ParseError> {
        if self.inputs == 0 || self.outputs == 0 || self.columns == 0 {
            return Err(ParseError::Params("counts must be positive".into()));
        }
        if self.columns < self.outputs {
            return Err(ParseError::Params(format!(
                "n_c = {} is smaller than n_o = {}",
                self.columns, self.outputs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Node {
    pub in1: SignalId,
    pub in2: SignalId,
    pub func: GateFunction,
}

impl Node {
    pub fn new(in1: SignalId, in2: SignalId, func: GateFunction) -> Self {
        Self { in1, in2, func }
    }

    /// Uniformly random node that is valid at `position`.
    pub fn random<R: Rng + ?Sized>(params: &CircuitParams, position: usize, rng: &mut R) -> Self {
        let limit = params.node_id(position);
        Self {
            in1: rng.gen_range(0..limit),
            in2: rng.gen_range(0..limit),
            func: GateFunction::ALL[rng.gen_range(0..GateFunction::COUNT)],
        }
    }
}

/// Which of the three node genes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GeneSlot {
    In1,
    In2,
    Func,
}

impl GeneSlot {
    pub const ALL: [GeneSlot; 3] = [GeneSlot::In1, GeneSlot::In2, GeneSlot::Func];

    pub fn offset(self) -> usize {
        match self {
            GeneSlot::In1 => 0,
            GeneSlot::In2 => 1,
            GeneSlot::Func => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViolationKind {
    #[error("connection {id} is not below limit {limit} (feed-forward)")]
    ForwardReference { id: u32, limit: u32 },
    #[error("function gene {0} outside the gate set")]
    UnknownFunction(u32),
    #[error("output gene {id} references no signal (max {max})")]
    OutputOutOfRange { id: u32, max: u32 },
}

/// First offending gene of an invalid chromosome.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("gene {gene}: {kind}")]
pub struct Violation {
    pub gene: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("invalid circuit parameters: {0}")]
    Params(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("expected {expected} genes, found {found}")]
    GeneCount { expected: String, found: usize },
    #[error(transparent)]
    Invalid(#[from] Violation),
}

/// Validates a raw gene vector, with or without trailing output genes.
pub fn validate_genes(params: &CircuitParams, genes: &[u32]) -> Result<(), Violation> {
    for p in 0..params.columns {
        let limit = params.node_id(p);
        for slot in [GeneSlot::In1, GeneSlot::In2] {
            let idx = 3 * p + slot.offset();
            let id = genes[idx];
            if id >= limit {
                return Err(Violation {
                    gene: idx,
                    kind: ViolationKind::ForwardReference { id, limit },
                });
            }
        }
        let idx = 3 * p + 2;
        if GateFunction::from_gene(genes[idx]).is_none() {
            return Err(Violation {
                gene: idx,
                kind: ViolationKind::UnknownFunction(genes[idx]),
            });
        }
    }
    let max = params.signals() as u32;
    for (j, &id) in genes[3 * params.columns..].iter().enumerate() {
        if id >= max {
            return Err(Violation {
                gene: 3 * params.columns + j,
                kind: ViolationKind::OutputOutOfRange { id, max: max - 1 },
            });
        }
    }
    Ok(())
}

/// CGP chromosome.
///
/// With `outputs` present this is the standard encoding of
/// `3·n_c + n_o` integers. Without it (transformer form) the primary outputs
/// are the last `n_o` nodes in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Chromosome {
    params: CircuitParams,
    nodes: Vec<Node>,
    outputs: Option<Vec<SignalId>>,
}

impl Chromosome {
    pub fn new(
        params: CircuitParams,
        nodes: Vec<Node>,
        outputs: Option<Vec<SignalId>>,
    ) -> Result<Self, ParseError> {
        params.check()?;
        if nodes.len() != params.columns {
            return Err(ParseError::GeneCount {
                expected: format!("{} nodes", params.columns),
                found: nodes.len(),
            });
        }
        if let Some(out) = &outputs {
            if out.len() != params.outputs {
                return Err(ParseError::GeneCount {
                    expected: format!("{} output genes", params.outputs),
                    found: out.len(),
                });
            }
        }
        let c = Self {
            params,
            nodes,
            outputs,
        };
        c.validate()?;
        Ok(c)
    }

    /// Builds from a flat gene vector of length `3·n_c` or `3·n_c + n_o`.
    pub fn from_genes(params: CircuitParams, genes: &[u32]) -> Result<Self, ParseError> {
        params.check()?;
        let bare = params.gene_count(false);
        let full = params.gene_count(true);
        if genes.len() != bare && genes.len() != full {
            return Err(ParseError::GeneCount {
                expected: format!("{bare} or {full}"),
                found: genes.len(),
            });
        }
        validate_genes(&params, genes)?;
        let nodes = genes[..bare]
            .chunks_exact(3)
            .map(|g| Node::new(g[0], g[1], GateFunction::from_gene(g[2]).unwrap()))
            .collect();
        let outputs = (genes.len() == full).then(|| genes[bare..].to_vec());
        Ok(Self {
            params,
            nodes,
            outputs,
        })
    }

    /// Uniformly random valid chromosome; outputs drawn over all signals
    /// when `with_outputs` is set.
    pub fn random<R: Rng + ?Sized>(params: CircuitParams, with_outputs: bool, rng: &mut R) -> Self {
        let nodes = (0..params.columns)
            .map(|p| Node::random(&params, p, rng))
            .collect();
        let outputs = with_outputs.then(|| {
            (0..params.outputs)
                .map(|_| rng.gen_range(0..params.signals() as u32))
                .collect()
        });
        Self::from_parts_unchecked(params, nodes, outputs)
    }

    pub(crate) fn from_parts(
        params: CircuitParams,
        nodes: Vec<Node>,
        outputs: Option<Vec<SignalId>>,
    ) -> Result<Self, Violation> {
        let c = Self {
            params,
            nodes,
            outputs,
        };
        c.validate()?;
        Ok(c)
    }

    pub(crate) fn from_parts_unchecked(
        params: CircuitParams,
        nodes: Vec<Node>,
        outputs: Option<Vec<SignalId>>,
    ) -> Self {
        let c = Self {
            params,
            nodes,
            outputs,
        };
        debug_assert!(c.validate().is_ok(), "{:?}", c.validate());
        c
    }

    pub fn params(&self) -> &CircuitParams {
        &self.params
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, position: usize) -> &Node {
        &self.nodes[position]
    }

    /// Explicit output genes, `None` in transformer form.
    pub fn output_genes(&self) -> Option<&[SignalId]> {
        self.outputs.as_deref()
    }

    pub fn is_transformer_form(&self) -> bool {
        self.outputs.is_none()
    }

    /// Signal driving each primary output, in output order.
    pub fn output_ids(&self) -> Vec<SignalId> {
        match &self.outputs {
            Some(o) => o.clone(),
            None => {
                let first = self.params.columns - self.params.outputs;
                (first..self.params.columns)
                    .map(|p| self.params.node_id(p))
                    .collect()
            }
        }
    }

    /// Flat gene vector (`3·n_c` plus output genes when present).
    pub fn genes(&self) -> Vec<u32> {
        let mut g = Vec::with_capacity(self.params.gene_count(self.outputs.is_some()));
        for n in &self.nodes {
            g.extend_from_slice(&[n.in1, n.in2, n.func.gene()]);
        }
        if let Some(o) = &self.outputs {
            g.extend_from_slice(o);
        }
        g
    }

    pub fn gene(&self, position: usize, slot: GeneSlot) -> u32 {
        let n = &self.nodes[position];
        match slot {
            GeneSlot::In1 => n.in1,
            GeneSlot::In2 => n.in2,
            GeneSlot::Func => n.func.gene(),
        }
    }

    /// Returns a copy with one node gene replaced; fails on an invalid value.
    pub fn with_gene(&self, position: usize, slot: GeneSlot, value: u32) -> Result<Self, Violation> {
        let gene = 3 * position + slot.offset();
        let mut out = self.clone();
        let node = &mut out.nodes[position];
        match slot {
            GeneSlot::In1 | GeneSlot::In2 => {
                let limit = self.params.node_id(position);
                if value >= limit {
                    return Err(Violation {
                        gene,
                        kind: ViolationKind::ForwardReference { id: value, limit },
                    });
                }
                if slot == GeneSlot::In1 {
                    node.in1 = value;
                } else {
                    node.in2 = value;
                }
            }
            GeneSlot::Func => {
                node.func = GateFunction::from_gene(value).ok_or(Violation {
                    gene,
                    kind: ViolationKind::UnknownFunction(value),
                })?;
            }
        }
        Ok(out)
    }

    /// Checks the feed-forward constraint and output references.
    pub fn validate(&self) -> Result<(), Violation> {
        validate_genes(&self.params, &self.genes())
    }

    /// Nodes lying on some path from a primary output back to the inputs.
    pub fn active(&self) -> ActiveSet {
        let n_i = self.params.inputs;
        let mut mask = vec![false; self.params.columns];
        for id in self.output_ids() {
            if let Some(p) = self.params.position_of(id) {
                mask[p] = true;
            }
        }
        for p in (0..self.params.columns).rev() {
            if !mask[p] {
                continue;
            }
            let node = &self.nodes[p];
            if node.in1 as usize >= n_i {
                mask[node.in1 as usize - n_i] = true;
            }
            if !node.func.is_unary() && node.in2 as usize >= n_i {
                mask[node.in2 as usize - n_i] = true;
            }
        }
        ActiveSet::from_mask(mask)
    }

    /// Sum of the library areas of all active gates.
    pub fn area(&self) -> Area {
        self.area_of(&self.active())
    }

    pub fn area_of(&self, active: &ActiveSet) -> Area {
        active
            .positions()
            .iter()
            .map(|&p| self.nodes[p].func.area())
            .sum()
    }

    /// Serializes to the line-oriented text format.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Chromosome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = &self.params;
        writeln!(f, "{} {} {} {}", p.bits, p.inputs, p.outputs, p.columns)?;
        for n in &self.nodes {
            writeln!(f, "{} {} {}", n.in1, n.in2, n.func.gene())?;
        }
        if let Some(o) = &self.outputs {
            let line: Vec<String> = o.iter().map(u32::to_string).collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn parse_ints(line: &str, lineno: usize) -> Result<Vec<u32>, ParseError> {
    line.split_whitespace()
        .map(|t| {
            t.parse::<u32>().map_err(|_| ParseError::Syntax {
                line: lineno,
                msg: format!("not an unsigned integer: {t:?}"),
            })
        })
        .collect()
}

impl FromStr for Chromosome {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, ParseError> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or(ParseError::Syntax {
            line: 1,
            msg: "missing header".into(),
        })?;
        let h = parse_ints(header, hl)?;
        if h.len() != 4 {
            return Err(ParseError::Syntax {
                line: hl,
                msg: "header must be \"k n_i n_o n_c\"".into(),
            });
        }
        let params = CircuitParams {
            bits: h[0],
            inputs: h[1] as usize,
            outputs: h[2] as usize,
            columns: h[3] as usize,
        };
        params.check()?;
        let mut genes = Vec::with_capacity(params.gene_count(true));
        for _ in 0..params.columns {
            let (ln, line) = lines.next().ok_or(ParseError::GeneCount {
                expected: format!("{} node lines", params.columns),
                found: genes.len() / 3,
            })?;
            let t = parse_ints(line, ln)?;
            if t.len() != 3 {
                return Err(ParseError::Syntax {
                    line: ln,
                    msg: "node line must be \"in1 in2 func\"".into(),
                });
            }
            genes.extend(t);
        }
        if let Some((ln, line)) = lines.next() {
            let o = parse_ints(line, ln)?;
            if o.len() != params.outputs {
                return Err(ParseError::GeneCount {
                    expected: format!("{} output genes", params.outputs),
                    found: o.len(),
                });
            }
            genes.extend(o);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(ParseError::Syntax {
                line: ln,
                msg: "trailing content".into(),
            });
        }
        Chromosome::from_genes(params, &genes)
    }
}

/// Active node positions in ascending (topological) order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSet {
    positions: Vec<usize>,
    mask: Vec<bool>,
}

impl ActiveSet {
    pub fn from_mask(mask: Vec<bool>) -> Self {
        let positions = mask
            .iter()
            .enumerate()
            .filter_map(|(p, &a)| a.then_some(p))
            .collect();
        Self { positions, mask }
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn contains(&self, position: usize) -> bool {
        self.mask[position]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}
