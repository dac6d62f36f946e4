//! Adam optimization, the minibatch training loop and checkpoint files.

pub mod adam;
pub mod checkpoint;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_from_bytes, checkpoint_to_bytes, load_checkpoint, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use train::{init_model, train, TrainConfig, TrainLog, TrainingSet, DEFAULT_CLIP_NORM};
