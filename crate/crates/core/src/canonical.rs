//! Conversion to transformer form and behavior-preserving node shuffles.

use rand::Rng;
use thiserror::Error;

use crate::chromosome::{Chromosome, Node, SignalId, Violation};
use crate::gate::GateFunction;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonicalizeError {
    #[error("need {needed} free node slots for output buffers, only {available} inactive nodes")]
    Budget { needed: usize, available: usize },
}

/// Rewrites `c` so that output `i` is driven by node `n_c - n_o + i` and
/// drops the output genes. The truth table is unchanged.
///
/// Output drivers that nothing else depends on are moved to the tail. Any
/// output read from a primary input, shared between outputs, or feeding
/// other logic gets an `OR(x, x)` buffer instead; each buffer consumes one
/// inactive node slot.
pub fn canonicalize_outputs(c: &Chromosome) -> Result<Chromosome, CanonicalizeError> {
    let Some(outputs) = c.output_genes() else {
        return Ok(c.clone());
    };
    let params = *c.params();
    let (n_c, n_o) = (params.columns, params.outputs);
    let tail = n_c - n_o;
    let active = c.active();

    // Active consumers of every node.
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n_c];
    for &q in active.positions() {
        let node = c.node(q);
        let mut reads = vec![node.in1];
        if !node.func.is_unary() && node.in2 != node.in1 {
            reads.push(node.in2);
        }
        for id in reads {
            if let Some(p) = params.position_of(id) {
                consumers[p].push(q);
            }
        }
    }

    let driver = |i: usize| params.position_of(outputs[i]);
    let mut movable: Vec<bool> = (0..n_o)
        .map(|i| {
            driver(i).is_some() && outputs.iter().filter(|&&o| o == outputs[i]).count() == 1
        })
        .collect();
    // A driver may move only if each of its consumers is a later-moved driver.
    loop {
        let mut changed = false;
        for i in 0..n_o {
            if !movable[i] {
                continue;
            }
            let d = driver(i).unwrap();
            let ok = consumers[d]
                .iter()
                .all(|&q| (i + 1..n_o).any(|j| movable[j] && driver(j) == Some(q)));
            if !ok {
                movable[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut moved_slot = vec![None; n_c];
    for i in (0..n_o).filter(|&i| movable[i]) {
        moved_slot[driver(i).unwrap()] = Some(i);
    }
    let buffers = movable.iter().filter(|m| !**m).count();

    // Body: all non-moved nodes in original order, minus `buffers` inactive
    // nodes taken from the back.
    let body: Vec<usize> = (0..n_c).filter(|&p| moved_slot[p].is_none()).collect();
    let inactive_in_body: Vec<usize> = body
        .iter()
        .copied()
        .filter(|&p| !active.contains(p))
        .collect();
    if inactive_in_body.len() < buffers {
        return Err(CanonicalizeError::Budget {
            needed: buffers,
            available: inactive_in_body.len(),
        });
    }
    let mut dropped = vec![false; n_c];
    for &p in inactive_in_body.iter().rev().take(buffers) {
        dropped[p] = true;
    }

    let mut new_pos: Vec<Option<usize>> = vec![None; n_c];
    let mut next = 0;
    for &p in &body {
        if !dropped[p] {
            new_pos[p] = Some(next);
            next += 1;
        }
    }
    debug_assert_eq!(next, tail);
    for (p, slot) in moved_slot.iter().enumerate() {
        if let Some(i) = slot {
            new_pos[p] = Some(tail + i);
        }
    }

    let remap = |id: SignalId| -> Option<SignalId> {
        match params.position_of(id) {
            None => Some(id),
            Some(p) => new_pos[p].map(|q| params.node_id(q)),
        }
    };

    let mut nodes = vec![Node::new(0, 0, GateFunction::And); n_c];
    for p in 0..n_c {
        let Some(q) = new_pos[p] else { continue };
        let limit = params.node_id(q);
        let fix = |id: SignalId| match remap(id) {
            Some(new) if new < limit => new,
            // Only behaviorally irrelevant genes can land here.
            _ => 0,
        };
        let old = c.node(p);
        nodes[q] = Node::new(fix(old.in1), fix(old.in2), old.func);
    }
    for i in (0..n_o).filter(|&i| !movable[i]) {
        let src = remap(outputs[i]).expect("output source is never dropped");
        nodes[tail + i] = Node::new(src, src, GateFunction::Or);
    }
    Ok(Chromosome::from_parts_unchecked(params, nodes, None))
}

/// Relocates every node `p` to `new_position[p]`, remapping connections.
///
/// Fails if the permutation breaks the feed-forward order.
pub fn apply_permutation(c: &Chromosome, new_position: &[usize]) -> Result<Chromosome, Violation> {
    let params = *c.params();
    assert_eq!(new_position.len(), params.columns);
    let remap = |id: SignalId| match params.position_of(id) {
        None => id,
        Some(p) => params.node_id(new_position[p]),
    };
    let mut nodes = vec![Node::new(0, 0, GateFunction::And); params.columns];
    for (p, node) in c.nodes().iter().enumerate() {
        nodes[new_position[p]] = Node::new(remap(node.in1), remap(node.in2), node.func);
    }
    let outputs = c
        .output_genes()
        .map(|o| o.iter().map(|&id| remap(id)).collect());
    Chromosome::from_parts(params, nodes, outputs)
}

/// Random topological reordering of the non-output nodes.
///
/// Returns the shuffled chromosome together with the new position of every
/// old position. The last `n_o` nodes stay in place, so outputs and their
/// order are unchanged.
pub fn augment_with_map<R: Rng + ?Sized>(c: &Chromosome, rng: &mut R) -> (Chromosome, Vec<usize>) {
    assert!(c.is_transformer_form(), "augment expects transformer form");
    let params = *c.params();
    let tail = params.columns - params.outputs;

    let mut indegree = vec![0usize; tail];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); tail];
    for p in 0..tail {
        let node = c.node(p);
        let mut deps: Vec<usize> = [node.in1, node.in2]
            .iter()
            .filter_map(|&id| params.position_of(id))
            .collect();
        deps.dedup();
        for d in deps {
            indegree[p] += 1;
            dependents[d].push(p);
        }
    }

    let mut ready: Vec<usize> = (0..tail).filter(|&p| indegree[p] == 0).collect();
    let mut new_position: Vec<usize> = (0..params.columns).collect();
    let mut next = 0;
    while !ready.is_empty() {
        let p = ready.swap_remove(rng.gen_range(0..ready.len()));
        new_position[p] = next;
        next += 1;
        for &q in &dependents[p] {
            indegree[q] -= 1;
            if indegree[q] == 0 {
                ready.push(q);
            }
        }
    }
    debug_assert_eq!(next, tail);
    let out = apply_permutation(c, &new_position).expect("topological order is feed-forward");
    (out, new_position)
}

/// Shuffles node positions without changing behavior (see [`augment_with_map`]).
pub fn augment<R: Rng + ?Sized>(c: &Chromosome, rng: &mut R) -> Chromosome {
    augment_with_map(c, rng).0
}

/// Replaces every inactive node with a fresh random node.
pub fn rerandomize_inactive<R: Rng + ?Sized>(c: &Chromosome, rng: &mut R) -> Chromosome {
    let params = *c.params();
    let active = c.active();
    let nodes = c
        .nodes()
        .iter()
        .enumerate()
        .map(|(p, n)| {
            if active.contains(p) {
                *n
            } else {
                Node::random(&params, p, rng)
            }
        })
        .collect();
    Chromosome::from_parts_unchecked(params, nodes, c.output_genes().map(<[_]>::to_vec))
}
