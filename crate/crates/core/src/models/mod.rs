//! Encoder, heads, freeze masks and checkpoints.

mod checkpoint;
mod freeze;
mod params;
mod spec;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use freeze::FreezeMask;
pub use params::{attach_head, build_encoder, ForwardPass, Layer, LayerKind, ModelParams, Provenance, Recorded};
pub use spec::{EncoderSpec, Geometry, HeadKind, HeadSpec};
