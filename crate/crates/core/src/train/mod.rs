//! Teacher training, objectives and the taildrop training loop.

mod config;
mod loss;
mod teacher;
mod trainer;

pub use config::{
    sample_tail_length, ArchitectureConfig, Stage, StageConfig, TailDistribution, TaildropConfig,
    TeacherConfig, TrainConfig,
};
pub use loss::{distill_loss, mse, reconstruction_loss, softmax_cross_entropy, DistillOutcome};
pub use teacher::{argmax_accuracy, gather, train_teacher, Teacher, TeacherReport};
pub use trainer::{
    autoencoder_from_checkpoint, autoencoder_to_checkpoint, desk_scale_autoencoder,
    linear_autoencoder, train_autoencoder, train_fixed_rate, write_epoch_csv, EpochRow, EpochStats,
    KBucket, Objective, StepOutcome, TaildropTrainer, TrainedAutoEncoder,
};

use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("classifier stopped at {accuracy:.4} train accuracy after {epochs} epochs")]
    NotConverged { accuracy: f64, epochs: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("writing metrics: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
