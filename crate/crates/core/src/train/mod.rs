//! Optimisation, metrics and embedding export.

mod dataset;
mod fit;
mod metrics;
mod optim;

pub use dataset::{build_examples, build_vocabulary};
pub use fit::{
    checkpoint_path, evaluate, export_embeddings, fit, predict, EmbeddingTable, FitReport, StepLoss, TrainConfig,
};
pub use metrics::{ConfusionMatrix, Metrics};
pub use optim::{adam_step, clip_global_norm, global_norm, AdamConfig, AdamState};
