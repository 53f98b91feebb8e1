use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EncoderSpec, FreezeMask, Geometry, HeadSpec, Layer, LayerKind, ModelParams, Provenance};
use crate::container;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::objectives::{AdadeltaSlot, OptimizerConfig, OptimizerState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"FSSLCKPT";

/// Model parameters plus enough optimizer state to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub epochs_completed: usize,
    pub optimizer: Option<OptimizerState<f32>>,
    /// Hash of the run configuration that produced this checkpoint; resuming
    /// under a different configuration is refused.
    pub run_hash: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct LayerMeta {
    name: String,
    kind: LayerKind,
    weight_shape: Vec<usize>,
    bias_shape: Vec<usize>,
    frozen: bool,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    config: OptimizerConfig,
    epoch: usize,
    steps: usize,
    trainable: Vec<bool>,
    /// Length of each slot's accumulators, `None` where absent.
    slots: Vec<Option<usize>>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    architecture_hash: String,
    encoder: EncoderSpec,
    geometry: Geometry,
    head: Option<HeadSpec>,
    provenance: Provenance,
    seed: u64,
    mask: FreezeMask,
    layers: Vec<LayerMeta>,
    epochs_completed: usize,
    optimizer: Option<OptimizerMeta>,
    run_hash: Option<String>,
}

fn take<'b>(blob: &mut &'b [f32], n: usize) -> Result<&'b [f32]> {
    if blob.len() < n {
        return Err(Error::CorruptData("checkpoint blob shorter than its header declares".into()));
    }
    let (head, rest) = blob.split_at(n);
    *blob = rest;
    Ok(head)
}

impl Checkpoint {
    pub fn new(params: ModelParams<f32>) -> Self {
        Checkpoint {
            params,
            epochs_completed: 0,
            optimizer: None,
            run_hash: None,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.params;
        let header = Header {
            architecture_hash: p.architecture_hash(),
            encoder: p.encoder.clone(),
            geometry: p.geometry,
            head: p.head.clone(),
            provenance: p.provenance,
            seed: p.seed,
            mask: p.mask,
            layers: p
                .layers
                .iter()
                .map(|l| LayerMeta {
                    name: l.name.clone(),
                    kind: l.kind,
                    weight_shape: l.weight.shape().to_vec(),
                    bias_shape: l.bias.shape().to_vec(),
                    frozen: l.frozen,
                })
                .collect(),
            epochs_completed: self.epochs_completed,
            optimizer: self.optimizer.as_ref().map(|o| OptimizerMeta {
                config: o.config,
                epoch: o.epoch,
                steps: o.steps,
                trainable: o.trainable.clone(),
                slots: o.slots.iter().map(|s| s.as_ref().map(|s| s.sq_grad.len())).collect(),
            }),
            run_hash: self.run_hash.clone(),
        };
        let mut values: Vec<f32> = Vec::with_capacity(p.parameter_count());
        for t in p.tensors() {
            values.extend_from_slice(t.data());
        }
        if let Some(o) = &self.optimizer {
            for s in o.slots.iter().flatten() {
                values.extend_from_slice(&s.sq_grad);
                values.extend_from_slice(&s.sq_update);
            }
        }
        container::encode(MAGIC, CHECKPOINT_FORMAT_VERSION, &header, &container::f32_bytes(values))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, blob): (Header, _) = container::decode("checkpoint", MAGIC, CHECKPOINT_FORMAT_VERSION, bytes)?;
        let values = container::read_f32s(blob)?;
        let mut rest: &[f32] = &values;
        let mut layers = Vec::with_capacity(h.layers.len());
        for l in h.layers {
            let nw = l.weight_shape.iter().product();
            let weight = Tensor::new(l.weight_shape, take(&mut rest, nw)?.to_vec())?;
            let nb = l.bias_shape.iter().product();
            let bias = Tensor::new(l.bias_shape, take(&mut rest, nb)?.to_vec())?;
            layers.push(Layer {
                name: l.name,
                kind: l.kind,
                weight,
                bias,
                frozen: l.frozen,
            });
        }
        let optimizer = match h.optimizer {
            None => None,
            Some(o) => {
                let mut slots = Vec::with_capacity(o.slots.len());
                for s in o.slots {
                    slots.push(match s {
                        None => None,
                        Some(n) => Some(AdadeltaSlot {
                            sq_grad: take(&mut rest, n)?.to_vec(),
                            sq_update: take(&mut rest, n)?.to_vec(),
                        }),
                    });
                }
                Some(OptimizerState {
                    config: o.config,
                    epoch: o.epoch,
                    steps: o.steps,
                    slots,
                    trainable: o.trainable,
                })
            }
        };
        if !rest.is_empty() {
            return Err(Error::CorruptData("checkpoint blob longer than its header declares".into()));
        }
        let params = ModelParams {
            encoder: h.encoder,
            geometry: h.geometry,
            head: h.head,
            layers,
            provenance: h.provenance,
            seed: h.seed,
            mask: h.mask,
        };
        if params.architecture_hash() != h.architecture_hash {
            return Err(Error::CorruptData("checkpoint architecture hash does not match its spec".into()));
        }
        Ok(Checkpoint {
            params,
            epochs_completed: h.epochs_completed,
            optimizer,
            run_hash: h.run_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Refuses checkpoints whose encoder architecture differs from `spec` at `geometry`.
    pub fn ensure_compatible(&self, spec: &EncoderSpec, geometry: Geometry) -> Result<()> {
        let want = spec.architecture_hash(geometry);
        let have = self.params.architecture_hash();
        if want != have {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint encoder {:?} on {}x{} does not match the configured {:?} on {}x{}",
                self.params.encoder.kernel_sizes,
                self.params.geometry.timesteps,
                self.params.geometry.channels,
                spec.kernel_sizes,
                geometry.timesteps,
                geometry.channels
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Mode;
    use crate::models::{attach_head, build_encoder};
    use crate::rng::SeedTree;

    fn model() -> ModelParams<f32> {
        let enc = build_encoder(&EncoderSpec::default(), Geometry::new(48, 4), 11).unwrap();
        attach_head(enc, &HeadSpec::classification(), 11).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_and_forward_identical() {
        let params = model().apply_freeze(FreezeMask::new([false, true, false]));
        let opt = OptimizerState::new(OptimizerConfig::adadelta(0.03), &params.tensors(), &params.trainable_flags()).unwrap();
        let ck = Checkpoint {
            params,
            epochs_completed: 3,
            optimizer: Some(opt),
            run_hash: Some("abc".into()),
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
        let x = Tensor::from_fn(&[2, 48, 4], |i| ((i * 7919) % 13) as f32 / 13.0 - 0.5);
        let a = ck.params.infer(&x).unwrap();
        let b = back.params.infer(&x).unwrap();
        assert_eq!(a.data(), b.data());
        let mut r1 = SeedTree::new(1).stream("t", &[]);
        let mut r2 = SeedTree::new(1).stream("t", &[]);
        let fa = ck.params.forward(&x, Mode::Train, &mut r1).unwrap();
        let fb = back.params.forward(&x, Mode::Train, &mut r2).unwrap();
        assert_eq!(fa.output.data(), fb.output.data());
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let bytes = Checkpoint::new(model()).to_bytes().unwrap();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(matches!(err, Error::CorruptData(_)), "{err}");
    }

    #[test]
    fn incompatible_spec_is_refused() {
        let ck = Checkpoint::new(model());
        assert!(ck.ensure_compatible(&EncoderSpec::default(), Geometry::new(48, 4)).is_ok());
        let err = ck.ensure_compatible(&EncoderSpec::default(), Geometry::new(48, 5)).unwrap_err();
        assert!(matches!(err, Error::IncompatibleCheckpoint(_)));
    }
}
