//! Composite objective, Adam, checkpoints and the training loop.

mod checkpoint;
mod config;
mod model;
mod optim;
mod train;

pub use checkpoint::Checkpoint;
pub use config::{Config, LossWeights, TrainConfig};
pub use model::{total_loss, BatchGraph, LossComponents, Model, Reconstruction};
pub use optim::Adam;
pub use train::{train, EpochMetrics, TrainOutcome, Trainer, METRICS_HEADER};
