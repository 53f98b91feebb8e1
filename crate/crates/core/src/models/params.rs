use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncoderSpec, FreezeMask, Geometry, HeadKind, HeadSpec};
use crate::diffcore::{Mode, NodeId, Padding, Scalar, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::{SeedTree, INIT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initialized,
    Pretrained,
    FineTuned,
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum LayerKind {
    Conv { padding: Padding },
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<F> {
    pub name: String,
    pub kind: LayerKind,
    /// Conv: `[k, C_in, C_out]`; dense: `[in, out]`.
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub frozen: bool,
}

impl<F: Scalar> Layer<F> {
    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// SHA-256 of the weight and bias as little-endian `f32`.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for v in self.weight.data().iter().chain(self.bias.data()) {
            h.update((v.as_f64() as f32).to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Parameters of an encoder with an optional head.
///
/// Layers are ordered `conv1, conv2, conv3`, then the head's dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub encoder: EncoderSpec,
    pub geometry: Geometry,
    pub head: Option<HeadSpec>,
    pub layers: Vec<Layer<F>>,
    pub provenance: Provenance,
    pub seed: u64,
    pub mask: FreezeMask,
}

/// Activations of every layer plus the final output of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    /// Post-ReLU conv maps `[n, T_l, C_l]`, the pooled representation `[n, 96]`,
    /// then each head layer (post-ReLU for hidden layers).
    pub activations: Vec<Tensor<F>>,
    pub output: Tensor<F>,
}

/// Tape handles for one recorded forward pass.
#[derive(Debug, Clone)]
pub struct Recorded {
    pub output: NodeId,
    pub activations: Vec<NodeId>,
    /// `(weight, bias)` per layer.
    pub params: Vec<(NodeId, NodeId)>,
}

fn uniform_init<F: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| F::of(rng.random_range(-bound..bound)))
}

/// Freshly initialized three-layer encoder: fan-in scaled uniform weights,
/// zero biases.
pub fn build_encoder<F: Scalar>(spec: &EncoderSpec, geometry: Geometry, seed: u64) -> Result<ModelParams<F>> {
    spec.validate()?;
    spec.check_geometry(geometry)?;
    let seeds = SeedTree::new(seed);
    let mut c_in = geometry.channels;
    let layers = (0..3)
        .map(|i| {
            let (k, c_out) = (spec.kernel_sizes[i], spec.filters[i]);
            let mut rng = seeds.stream(INIT, &[i as u64]);
            let layer = Layer {
                name: format!("conv{}", i + 1),
                kind: LayerKind::Conv { padding: spec.padding },
                weight: uniform_init(&[k, c_in, c_out], k * c_in, &mut rng),
                bias: Tensor::zeros(&[c_out]),
                frozen: false,
            };
            c_in = c_out;
            layer
        })
        .collect();
    Ok(ModelParams {
        encoder: spec.clone(),
        geometry,
        head: None,
        layers,
        provenance: Provenance::Initialized,
        seed,
        mask: FreezeMask::TRAINABLE,
    })
}

/// Replaces any existing head with a freshly initialized one.
pub fn attach_head<F: Scalar>(mut encoder: ModelParams<F>, head: &HeadSpec, seed: u64) -> Result<ModelParams<F>> {
    head.validate()?;
    let repr = encoder.encoder.representation_dim();
    if head.input_width != repr {
        return Err(Error::Config(format!(
            "head expects input width {} but the encoder produces {repr}",
            head.input_width
        )));
    }
    let prefix = match head.kind {
        HeadKind::Projection => "proj",
        HeadKind::Classification => "cls",
    };
    encoder.layers.truncate(3);
    let seeds = SeedTree::new(seed);
    let mut d_in = repr;
    for (i, &d_out) in head.widths.iter().enumerate() {
        let mut rng = seeds.stream(INIT, &[100 + i as u64]);
        encoder.layers.push(Layer {
            name: format!("{prefix}{}", i + 1),
            kind: LayerKind::Dense,
            weight: uniform_init(&[d_in, d_out], d_in, &mut rng),
            bias: Tensor::zeros(&[d_out]),
            frozen: false,
        });
        d_in = d_out;
    }
    encoder.head = Some(head.clone());
    Ok(encoder)
}

impl<F: Scalar> ModelParams<F> {
    pub fn architecture_hash(&self) -> String {
        self.encoder.architecture_hash(self.geometry)
    }

    /// Freezes encoder layers per `mask`; head layers stay trainable.
    pub fn apply_freeze(mut self, mask: FreezeMask) -> Self {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.frozen = i < 3 && mask.is_frozen(i);
        }
        self.mask = mask;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    pub fn trainable_parameter_count(&self) -> usize {
        self.layers.iter().filter(|l| !l.frozen).map(Layer::parameter_count).sum()
    }

    pub fn output_dim(&self) -> usize {
        self.head
            .as_ref()
            .map_or(self.encoder.representation_dim(), HeadSpec::output_dim)
    }

    /// Names matching [`ForwardPass::activations`].
    pub fn activation_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.layers[..3].iter().map(|l| l.name.clone()).collect();
        names.push("pool".into());
        names.extend(self.layers[3..].iter().map(|l| l.name.clone()));
        names
    }

    /// Flat parameter list `[w1, b1, w2, b2, ...]`.
    pub fn tensors(&self) -> Vec<&Tensor<F>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Trainability per entry of [`tensors`](Self::tensors).
    pub fn trainable_flags(&self) -> Vec<bool> {
        self.layers.iter().flat_map(|l| [!l.frozen, !l.frozen]).collect()
    }

    pub fn cast<G: Scalar>(&self) -> ModelParams<G> {
        ModelParams {
            encoder: self.encoder.clone(),
            geometry: self.geometry,
            head: self.head.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                    frozen: l.frozen,
                })
                .collect(),
            provenance: self.provenance,
            seed: self.seed,
            mask: self.mask,
        }
    }

    fn check_batch(&self, batch: &Tensor<F>) -> Result<()> {
        batch.expect_rank("forward", 3)?;
        if batch.dim(1) != self.geometry.timesteps {
            return Err(Error::dim("forward", "timesteps", self.geometry.timesteps, batch.dim(1)));
        }
        if batch.dim(2) != self.geometry.channels {
            return Err(Error::dim("forward", "channels", self.geometry.channels, batch.dim(2)));
        }
        Ok(())
    }

    /// Records a forward pass of `batch` (`[n, T, C]`, already on the tape).
    /// Frozen layers enter the tape as constants.
    pub fn record<'a, R: Rng + ?Sized>(
        &'a self,
        tape: &mut Tape<'a, F>,
        batch: NodeId,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Recorded> {
        self.check_batch(tape.value(batch))?;
        let params: Vec<(NodeId, NodeId)> = self
            .layers
            .iter()
            .map(|l| (tape.leaf(&l.weight, !l.frozen), tape.leaf(&l.bias, !l.frozen)))
            .collect();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut h = batch;
        for (layer, &(w, b)) in self.layers[..3].iter().zip(&params) {
            let LayerKind::Conv { padding } = layer.kind else {
                return Err(Error::Internal(format!("layer {} is not a convolution", layer.name)));
            };
            h = tape.conv1d(h, w, b, padding)?;
            h = tape.relu(h);
            activations.push(h);
            h = tape.dropout(h, self.encoder.dropout, mode, rng)?;
        }
        h = tape.global_max_pool(h)?;
        activations.push(h);
        let head = &params[3..];
        for (i, &(w, b)) in head.iter().enumerate() {
            h = tape.dense(h, w, b)?;
            if i + 1 < head.len() {
                h = tape.relu(h);
            }
            activations.push(h);
        }
        Ok(Recorded {
            output: h,
            activations,
            params,
        })
    }

    pub fn forward<R: Rng + ?Sized>(&self, batch: &Tensor<F>, mode: Mode, rng: &mut R) -> Result<ForwardPass<F>> {
        let mut tape = Tape::new();
        let input = tape.constant(batch);
        let rec = self.record(&mut tape, input, mode, rng)?;
        Ok(ForwardPass {
            activations: rec.activations.iter().map(|&id| tape.value(id).clone()).collect(),
            output: tape.value(rec.output).clone(),
        })
    }

    /// Eval-mode output only.
    pub fn infer(&self, batch: &Tensor<F>) -> Result<Tensor<F>> {
        let mut unused = SeedTree::new(0).stream("unused", &[]);
        let mut tape = Tape::new();
        let input = tape.constant(batch);
        let rec = self.record(&mut tape, input, Mode::Eval, &mut unused)?;
        Ok(tape.value(rec.output).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheckConfig, Probe};
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SeedTree::new(seed).stream("test", &[]);
        Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
    }

    fn classifier(channels: usize) -> ModelParams<f64> {
        let enc = build_encoder(&EncoderSpec::default(), Geometry::new(48, channels), 1).unwrap();
        attach_head(enc, &HeadSpec::classification(), 2).unwrap()
    }

    #[test]
    fn geometry_checks() {
        let spec = EncoderSpec::default();
        let enc = build_encoder::<f32>(&spec, Geometry::new(48, 76), 0).unwrap();
        assert_eq!(enc.output_dim(), 96);
        assert!(build_encoder::<f32>(&spec, Geometry::new(47, 76), 0).is_ok());
        let err = build_encoder::<f32>(&spec, Geometry::new(30, 76), 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn head_output_dims_and_width_check() {
        let enc = build_encoder::<f32>(&EncoderSpec::default(), Geometry::new(48, 8), 0).unwrap();
        let proj = attach_head(enc.clone(), &HeadSpec::projection(), 1).unwrap();
        assert_eq!(proj.output_dim(), 50);
        let cls = attach_head(enc.clone(), &HeadSpec::classification(), 1).unwrap();
        assert_eq!(cls.output_dim(), 2);
        let wrong = HeadSpec::classification().with_input_width(95);
        assert!(attach_head(enc, &wrong, 1).is_err());
    }

    #[test]
    fn activation_shapes_for_batch() {
        let model = classifier(8);
        let x = randn(&[5, 48, 8], 3);
        let mut rng = SeedTree::new(0).stream("d", &[]);
        let pass = model.forward(&x, Mode::Eval, &mut rng).unwrap();
        let shapes: Vec<Vec<usize>> = pass.activations.iter().map(|a| a.shape().to_vec()).collect();
        assert_eq!(
            shapes,
            vec![vec![5, 25, 32], vec![5, 10, 64], vec![5, 3, 96], vec![5, 96], vec![5, 128], vec![5, 2]]
        );
        assert_eq!(model.activation_names(), ["conv1", "conv2", "conv3", "pool", "cls1", "cls2"]);
    }

    #[test]
    fn eval_forward_is_pure() {
        let model = classifier(8);
        let x = randn(&[3, 48, 8], 4);
        assert_eq!(model.infer(&x).unwrap(), model.infer(&x).unwrap());
    }

    #[test]
    fn zero_weight_model_outputs_biases() {
        let mut model = classifier(8);
        for l in &mut model.layers {
            l.weight.scale(0.0);
        }
        let last = model.layers.last_mut().unwrap();
        last.bias = Tensor::new(vec![2], vec![0.25, -0.75]).unwrap();
        let y = model.infer(&randn(&[4, 48, 8], 5)).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.25, -0.75]);
        }
    }

    #[test]
    fn wrong_batch_geometry_is_dimension_error() {
        let model = classifier(8);
        let err = model.infer(&Tensor::zeros(&[2, 48, 7])).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn freeze_counts() {
        let model = classifier(8);
        let total = model.parameter_count();
        let head: usize = model.layers[3..].iter().map(Layer::parameter_count).sum();
        assert_eq!(model.clone().apply_freeze(FreezeMask::TRAINABLE).trainable_parameter_count(), total);
        assert_eq!(model.clone().apply_freeze(FreezeMask::FROZEN).trainable_parameter_count(), head);
        // Adding a frozen layer to any mask never increases the trainable count.
        for m in FreezeMask::all() {
            for i in 0..3 {
                if !m.frozen[i] {
                    let mut more = m;
                    more.frozen[i] = true;
                    assert!(
                        model.clone().apply_freeze(more).trainable_parameter_count()
                            < model.clone().apply_freeze(m).trainable_parameter_count()
                    );
                }
            }
        }
    }

    /// Full encoder + classification head on a 48×8 window against central differences.
    #[test]
    fn full_model_gradient_check() {
        let model = classifier(8);
        let x = randn(&[2, 48, 8], 6);
        let r = randn(&[2, 2], 7);
        let names: Vec<String> = model
            .layers
            .iter()
            .flat_map(|l| [format!("{}.w", l.name), format!("{}.b", l.name)])
            .collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let params: Vec<Tensor<f64>> = model.tensors().into_iter().cloned().collect();
        let cfg = GradCheckConfig {
            max_coords: Some(12),
            ..GradCheckConfig::default()
        };
        let report = grad_check(&names, &params, &cfg, |p, _| {
            let mut m = model.clone();
            for (dst, src) in m.tensors_mut().into_iter().zip(p) {
                *dst = src.clone();
            }
            let mut rng = SeedTree::new(9).stream("dropout", &[]);
            let mut tape = Tape::new();
            let input = tape.constant(&x);
            let rec = m.record(&mut tape, input, Mode::Train, &mut rng)?;
            let out = tape.value(rec.output);
            let loss: f64 = out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum();
            let grads = tape.backward(rec.output, r.clone())?;
            let grads = rec
                .params
                .iter()
                .flat_map(|&(w, b)| [grads.get(w).cloned(), grads.get(b).cloned()])
                .collect();
            Ok(Probe {
                loss,
                pattern: tape.pattern_signature(),
                grads,
            })
        })
        .unwrap();
        assert!(report.passed(), "{report:#?}");
        assert!(report.max_rel_error() < 1e-4);
    }
}
