//! Optimization, pretraining, adversarial training and checkpoints.

mod adam;
mod adversarial;
mod checkpoint;
mod common;
mod config;
mod model;
mod pretrain;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use adversarial::{discriminator_confusion, train_adversarial, AdversarialOutcome};
pub use checkpoint::{
    checkpoint_precision, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CheckpointRole, MAGIC, VERSION,
};
pub use common::{init_models, Observer};
pub use config::{EpochLog, ModelConfig, TrainConfig};
pub use model::Disaggregator;
pub use pretrain::{pretrain_appliance, Pretrained};
