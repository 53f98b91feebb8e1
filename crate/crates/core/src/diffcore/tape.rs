use std::borrow::Cow;
use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::Rng;

use super::ops::{self, GradRequest, Mode, Padding};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<F> {
    Leaf,
    Conv1d {
        input: NodeId,
        kernel: NodeId,
        bias: NodeId,
        padding: Padding,
    },
    Relu {
        input: NodeId,
    },
    Dropout {
        input: NodeId,
        mask: Option<Vec<F>>,
    },
    GlobalMaxPool {
        input: NodeId,
        argmax: Vec<usize>,
        time: usize,
    },
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
}

#[derive(Debug)]
struct Node<'a, F: Scalar> {
    value: Cow<'a, Tensor<F>>,
    op: Op<F>,
    requires_grad: bool,
}

/// Record of a forward pass.
///
/// Leaves are either trainable parameters (`requires_grad`) or constants
/// (inputs and frozen parameters). Operators whose inputs are all constants
/// are constants themselves, so no backward work is ever done for them.
#[derive(Debug, Default)]
pub struct Tape<'a, F: Scalar> {
    nodes: Vec<Node<'a, F>>,
}

/// Gradients of the trainable leaves, indexed by their [`NodeId`].
#[derive(Debug)]
pub struct Gradients<F> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Gradients<F> {
    /// `None` for constants and for parameters the output does not depend on.
    pub fn get(&self, id: NodeId) -> Option<&Tensor<F>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<F>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<'a, F: Scalar> Tape<'a, F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<F>>, op: Op<F>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: &'a Tensor<F>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    pub fn constant(&mut self, value: &'a Tensor<F>) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, false)
    }

    pub fn constant_owned(&mut self, value: Tensor<F>) -> NodeId {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: &'a Tensor<F>, trainable: bool) -> NodeId {
        self.push(Cow::Borrowed(value), Op::Leaf, trainable)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<F> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i.0].requires_grad)
    }

    pub fn conv1d(&mut self, input: NodeId, kernel: NodeId, bias: NodeId, padding: Padding) -> Result<NodeId> {
        let y = ops::conv1d_forward(self.value(input), self.value(kernel), self.value(bias), padding)?;
        let rg = self.any_grad(&[input, kernel, bias]);
        Ok(self.push(
            Cow::Owned(y),
            Op::Conv1d {
                input,
                kernel,
                bias,
                padding,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let y = ops::relu(self.value(input));
        let rg = self.any_grad(&[input]);
        self.push(Cow::Owned(y), Op::Relu { input }, rg)
    }

    pub fn dropout<R: Rng + ?Sized>(&mut self, input: NodeId, rate: f64, mode: Mode, rng: &mut R) -> Result<NodeId> {
        let (y, mask) = ops::dropout_forward(self.value(input), rate, mode, rng)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(Cow::Owned(y), Op::Dropout { input, mask }, rg))
    }

    pub fn global_max_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let time = x.dim(x.rank() - 2);
        let (y, argmax) = ops::global_max_pool1d(x)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(Cow::Owned(y), Op::GlobalMaxPool { input, argmax, time }, rg))
    }

    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let y = ops::dense_forward(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(Cow::Owned(y), Op::Dense { input, weight, bias }, rg))
    }

    /// Hash of every ReLU sign pattern and max-pool argmax on the tape.
    ///
    /// Two forward passes with equal signatures lie in the same linear piece
    /// of the network, which is what finite differences need.
    pub fn pattern_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { .. } => {
                    for chunk in node.value.data().chunks(64) {
                        let bits = chunk
                            .iter()
                            .enumerate()
                            .fold(0u64, |acc, (i, &v)| acc | (u64::from(v > F::zero()) << i));
                        bits.hash(&mut h);
                    }
                }
                Op::GlobalMaxPool { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// Reverse-mode sweep from `output`, seeded with `d loss / d output`.
    pub fn backward(&self, output: NodeId, seed: Tensor<F>) -> Result<Gradients<F>> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Internal(format!("backward: node {} not on tape", output.0)));
        }
        seed.expect_shape("backward seed", self.value(output).shape())?;
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Conv1d {
                    input,
                    kernel,
                    bias,
                    padding,
                } => {
                    let want = GradRequest {
                        input: self.requires_grad(*input),
                        weight: self.requires_grad(*kernel),
                        bias: self.requires_grad(*bias),
                    };
                    let r = ops::conv1d_backward(
                        &g,
                        Some(self.value(*input)),
                        Some(self.value(*kernel)),
                        *padding,
                        want,
                    )?;
                    accumulate(&mut grads, *input, r.input)?;
                    accumulate(&mut grads, *kernel, r.weight)?;
                    accumulate(&mut grads, *bias, r.bias)?;
                }
                Op::Relu { input } => {
                    let dx = ops::relu_backward(&g, &node.value)?;
                    accumulate(&mut grads, *input, Some(dx))?;
                }
                Op::Dropout { input, mask } => {
                    let dx = ops::dropout_backward(&g, mask.as_deref())?;
                    accumulate(&mut grads, *input, Some(dx))?;
                }
                Op::GlobalMaxPool { input, argmax, time } => {
                    let dx = ops::global_max_pool1d_backward(&g, argmax, *time)?;
                    accumulate(&mut grads, *input, Some(dx))?;
                }
                Op::Dense { input, weight, bias } => {
                    let want = GradRequest {
                        input: self.requires_grad(*input),
                        weight: self.requires_grad(*weight),
                        bias: self.requires_grad(*bias),
                    };
                    let r = ops::dense_backward(&g, Some(self.value(*input)), Some(self.value(*weight)), want)?;
                    accumulate(&mut grads, *input, r.input)?;
                    accumulate(&mut grads, *weight, r.weight)?;
                    accumulate(&mut grads, *bias, r.bias)?;
                }
            }
        }

        // Only trainable leaves keep their gradient.
        for (idx, node) in self.nodes.iter().enumerate() {
            if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate<F: Scalar>(grads: &mut [Option<Tensor<F>>], id: NodeId, g: Option<Tensor<F>>) -> Result<()> {
    let Some(g) = g else { return Ok(()) };
    match &mut grads[id.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn constants_and_frozen_parameters_get_no_gradient() {
        let x = Tensor::<f64>::from_fn(&[2, 3], |i| i as f64 - 2.0);
        let w1 = Tensor::from_fn(&[3, 4], |i| (i as f64 * 0.37).sin());
        let b1 = Tensor::zeros(&[4]);
        let w2 = Tensor::from_fn(&[4, 2], |i| (i as f64 * 0.71).cos());
        let b2 = Tensor::zeros(&[2]);
        let mut tape = Tape::new();
        let xi = tape.constant(&x);
        let w1i = tape.leaf(&w1, false);
        let b1i = tape.leaf(&b1, false);
        let w2i = tape.param(&w2);
        let b2i = tape.param(&b2);
        let h = tape.dense(xi, w1i, b1i).unwrap();
        let h = tape.relu(h);
        let y = tape.dense(h, w2i, b2i).unwrap();
        let seed = Tensor::full(&[2, 2], 1.0);
        let grads = tape.backward(y, seed).unwrap();
        assert!(grads.get(xi).is_none());
        assert!(grads.get(w1i).is_none());
        assert!(grads.get(b1i).is_none());
        assert_eq!(grads.get(b2i).unwrap().data(), &[2.0, 2.0]);
        assert!(grads.get(w2i).is_some());
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let x = Tensor::<f64>::full(&[1, 2], 1.0);
        let w = Tensor::full(&[2, 1], 1.0);
        let b = Tensor::zeros(&[1]);
        let unused = Tensor::full(&[3], 5.0);
        let mut tape = Tape::new();
        let xi = tape.constant(&x);
        let wi = tape.param(&w);
        let bi = tape.param(&b);
        let ui = tape.param(&unused);
        let y = tape.dense(xi, wi, bi).unwrap();
        let grads = tape.backward(y, Tensor::full(&[1, 1], 1.0)).unwrap();
        assert!(grads.get(ui).is_none());
    }

    #[test]
    fn backward_rejects_bad_seed() {
        let x = Tensor::<f64>::full(&[1, 2], 1.0);
        let mut tape = Tape::new();
        let xi = tape.param(&x);
        let y = tape.relu(xi);
        assert!(tape.backward(y, Tensor::full(&[2, 1], 1.0)).is_err());
    }

    #[test]
    fn signature_tracks_relu_pattern() {
        let a = Tensor::<f64>::new(vec![3], vec![1.0, -1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::new(vec![3], vec![1.5, -0.5, 2.5]).unwrap();
        let c = Tensor::<f64>::new(vec![3], vec![1.0, 1.0, 2.0]).unwrap();
        let sig = |t: &Tensor<f64>| {
            let mut tape = Tape::new();
            let i = tape.constant(t);
            tape.relu(i);
            tape.pattern_signature()
        };
        assert_eq!(sig(&a), sig(&b));
        assert_ne!(sig(&a), sig(&c));
    }

    #[test]
    fn dropout_on_tape_is_deterministic_per_stream() {
        let x = Tensor::<f64>::full(&[4, 8], 1.0);
        let run = || {
            let mut rng = SeedTree::new(3).stream("dropout", &[0]);
            let mut tape = Tape::new();
            let i = tape.param(&x);
            let y = tape.dropout(i, 0.5, Mode::Train, &mut rng).unwrap();
            tape.value(y).clone()
        };
        assert_eq!(run(), run());
    }
}
