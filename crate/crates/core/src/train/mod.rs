//! Optimization, data pairing, augmentation, the phase head, metrics and
//! the training loops.

pub mod augment;
pub mod head;
pub mod loops;
pub mod metrics;
pub mod optim;
pub mod pairs;

pub use loops::{evaluate_phase, finetune, pretrain, train_phase, Autoencoder, PhaseModel, TrainReport};
