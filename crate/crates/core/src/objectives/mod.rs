//! Losses and optimizers.

mod cross_entropy;
mod ntxent;
mod optim;

pub use cross_entropy::{cross_entropy, LossAndGrad};
pub use ntxent::{nt_xent, ContrastiveConfig, EmbeddingBatch, NtXent};
pub use optim::{adadelta_step, cosine_lr, sgd_cosine_step, AdadeltaSlot, OptimizerConfig, OptimizerState};
