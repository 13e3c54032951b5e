//! Per-character vector-quantized periodic autoencoders sharing one
//! amplitude codebook, and their training loops.

pub mod model;
pub mod shared;
pub mod train;

pub use model::{EncodeOutput, ForwardOutput, LossWeights, ModelConfig, VqPae};
pub use shared::SharedModel;
pub use train::{channel_statistics, initialize, train_joint, train_joint_with, train_single, StepStats, TrainConfig, TrainReport, Trainer, TrainingSet};
