//! Contrastive self-supervised pretraining and fairness auditing for
//! timeseries classifiers.
//!
//! The crate covers the whole experimental loop:
//!
//! - [`diffcore`]: the tensor kernels (temporal convolution, dense layers,
//!   pooling, dropout) with analytic backward passes and a finite-difference
//!   gradient checker.
//! - [`models`]: the three-layer temporal CNN encoder, projection and
//!   classification heads, freeze masks and checkpoints.
//! - [`augment`] and [`objectives`]: two-view augmentation, NT-Xent and
//!   cross-entropy losses, SGD with cosine decay and Adadelta.
//! - [`trainer`]: contrastive pretraining, freeze-masked fine-tuning and the
//!   supervised baseline.
//! - [`fairmetrics`]: AUC-ROC with bootstrap intervals, error rates, Error
//!   Rate Ratio and parity deviation per protected attribute.
//! - [`cka`]: linear Centered Kernel Alignment grids between layer
//!   activations, optionally conditioned on a segment.
//! - [`dataio`]: the on-disk dataset format, splits and a synthetic
//!   generator with controllable group bias.

pub mod augment;
pub mod cka;
pub mod dataio;
mod container;
pub mod diffcore;
pub mod error;
pub mod fairmetrics;
pub mod models;
pub mod objectives;
pub mod plot;
pub mod rng;
pub mod trainer;

pub use error::{Error, ErrorKind, Result};

pub use augment::AugmentConfig;
pub use cka::{ActivationDump, SimilarityGrid};
pub use dataio::{Dataset, DatasetManifest, Split, SynthSpec};
pub use diffcore::{Scalar, Tensor};
pub use fairmetrics::{ConfusionCounts, FairnessReport, MetricEstimate, PredictionTable, ProtectedAttribute};
pub use models::{Checkpoint, EncoderSpec, FreezeMask, HeadSpec, ModelParams};
pub use objectives::{ContrastiveConfig, EmbeddingBatch, OptimizerState};
pub use rng::{Prng, SeedTree};
pub use trainer::RunConfig;
