//! Cartesian genetic programming for approximate unsigned multipliers.
//!
//! Chromosomes encode single-row feed-forward gate netlists. The evaluator
//! simulates them exhaustively with 64 input rows per machine word and
//! scores them by active-gate area under a worst-case-error bound. Search is
//! a (1+λ) strategy driven either by uniform point mutation or by a
//! [`MutationModel`](search::MutationModel) that proposes per-node mutation
//! distributions.

pub mod canonical;
pub mod chromosome;
pub mod eval;
pub mod gate;
pub mod mutation;
pub mod report;
pub mod search;
pub mod seeds;

pub use canonical::{augment, canonicalize_outputs};
pub use chromosome::{ActiveSet, Chromosome, CircuitParams, GeneSlot, Node, SignalId};
pub use eval::{epsilon_abs, ErrorMetrics, Evaluation, Evaluator, Fitness};
pub use gate::{Area, GateFunction};
pub use mutation::{mutate_guided, mutate_uniform, MutationDistribution};
pub use search::{evolve, evolve_hybrid, evolve_standard, evolve_standard_observed, Mode, MutationModel, RunLog, SearchConfig};
pub use seeds::{default_columns, seed_multiplier, SeedKind};
