//! Training corpus construction and the training loop for the mutation
//! model.

pub mod dataset;
pub mod labels;
pub mod loss;
pub mod pareto;
pub mod train;

pub use dataset::{
    attractiveness_of, filter_valid, generate_dataset, load_or_compute_labels, read_dataset, write_dataset,
    DatasetError, GenConfig, Record,
};
pub use labels::{normalize, raw_sensitivity, sensitivity_labels};
pub use loss::{bce, confidence_penalty, total_loss, LossBreakdown, LossTargets, LossWeights};
pub use pareto::{attractiveness, pareto_cost, ParetoCurve};
pub use train::{mask_ratio, trace_csv, train, Adam, EpochLoss, TrainConfig, TrainError, TrainRecord};
