use serde::{Deserialize, Serialize};

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    /// Plain SGD; the learning rate follows a single cosine cycle over
    /// `total_epochs`, evaluated once per epoch.
    SgdCosine { base_lr: f64, total_epochs: usize },
    Adadelta { lr: f64, rho: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn sgd_cosine(base_lr: f64, total_epochs: usize) -> Self {
        OptimizerConfig::SgdCosine { base_lr, total_epochs }
    }

    pub fn adadelta(lr: f64) -> Self {
        OptimizerConfig::Adadelta { lr, rho: 0.95, eps: 1e-6 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            OptimizerConfig::SgdCosine { base_lr, total_epochs } => {
                if !(base_lr > 0.0) || total_epochs == 0 {
                    return Err(Error::Config("sgd_cosine needs base_lr > 0 and total_epochs > 0".into()));
                }
            }
            OptimizerConfig::Adadelta { lr, rho, eps } => {
                if !(lr > 0.0) || !(0.0..1.0).contains(&rho) || !(eps > 0.0) {
                    return Err(Error::Config("adadelta needs lr > 0, 0 <= rho < 1, eps > 0".into()));
                }
            }
        }
        Ok(())
    }
}

/// `½ · lr₀ · (1 + cos(π t / T))`.
pub fn cosine_lr(base_lr: f64, t: usize, total: usize) -> f64 {
    0.5 * base_lr * (1.0 + (std::f64::consts::PI * t as f64 / total as f64).cos())
}

/// Adadelta running averages for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdadeltaSlot<F> {
    pub sq_grad: Vec<F>,
    pub sq_update: Vec<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<F> {
    pub config: OptimizerConfig,
    /// Position in the per-epoch schedule.
    pub epoch: usize,
    pub steps: usize,
    /// One entry per parameter tensor. Adadelta keeps accumulators for
    /// trainable tensors only; frozen ones are `None`.
    pub slots: Vec<Option<AdadeltaSlot<F>>>,
    pub trainable: Vec<bool>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(config: OptimizerConfig, params: &[&Tensor<F>], trainable: &[bool]) -> Result<Self> {
        config.validate()?;
        if params.len() != trainable.len() {
            return Err(Error::Internal("optimizer: one trainable flag per parameter".into()));
        }
        let slots = params
            .iter()
            .zip(trainable)
            .map(|(p, &t)| match config {
                OptimizerConfig::Adadelta { .. } if t => Some(AdadeltaSlot {
                    sq_grad: vec![F::zero(); p.len()],
                    sq_update: vec![F::zero(); p.len()],
                }),
                _ => None,
            })
            .collect();
        Ok(OptimizerState {
            config,
            epoch: 0,
            steps: 0,
            slots,
            trainable: trainable.to_vec(),
        })
    }

    /// Learning rate in effect for the current epoch.
    pub fn learning_rate(&self) -> Result<f64> {
        match self.config {
            OptimizerConfig::SgdCosine { base_lr, total_epochs } => {
                if self.epoch >= total_epochs {
                    return Err(Error::ScheduleExhausted {
                        step: self.epoch,
                        total: total_epochs,
                    });
                }
                Ok(cosine_lr(base_lr, self.epoch, total_epochs))
            }
            OptimizerConfig::Adadelta { lr, .. } => Ok(lr),
        }
    }

    pub fn end_epoch(&mut self) {
        self.epoch += 1;
    }

    /// Updates trainable tensors in place. `grads[i] == None` means a zero
    /// gradient; frozen tensors are never touched.
    pub fn step(&mut self, params: &mut [&mut Tensor<F>], grads: &[Option<&Tensor<F>>]) -> Result<()> {
        if params.len() != self.slots.len() || grads.len() != self.slots.len() {
            return Err(Error::Internal(format!(
                "optimizer built for {} tensors, got {} params and {} grads",
                self.slots.len(),
                params.len(),
                grads.len()
            )));
        }
        match self.config {
            OptimizerConfig::SgdCosine { .. } => {
                let lr = self.learning_rate()?;
                for (i, p) in params.iter_mut().enumerate() {
                    if let (true, Some(g)) = (self.trainable[i], grads[i]) {
                        sgd_cosine_step(p, g, lr)?;
                    }
                }
            }
            OptimizerConfig::Adadelta { lr, rho, eps } => {
                for (i, p) in params.iter_mut().enumerate() {
                    let (Some(slot), Some(g)) = (self.slots[i].as_mut(), grads[i]) else {
                        continue;
                    };
                    adadelta_step(p, g, slot, lr, rho, eps)?;
                }
            }
        }
        self.steps += 1;
        Ok(())
    }
}

/// `p ← p − lr · g`.
pub fn sgd_cosine_step<F: Scalar>(param: &mut Tensor<F>, grad: &Tensor<F>, lr: f64) -> Result<()> {
    grad.expect_shape("sgd step", param.shape())?;
    let lr = F::of(lr);
    param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .for_each(|(p, &g)| *p = *p - lr * g);
    Ok(())
}

/// One Adadelta update:
/// `E[g²] ← ρE[g²] + (1−ρ)g²`, `Δ = √(E[Δ²]+ε) / √(E[g²]+ε) · g`,
/// `E[Δ²] ← ρE[Δ²] + (1−ρ)Δ²`, `p ← p − lr·Δ`.
pub fn adadelta_step<F: Scalar>(
    param: &mut Tensor<F>,
    grad: &Tensor<F>,
    slot: &mut AdadeltaSlot<F>,
    lr: f64,
    rho: f64,
    eps: f64,
) -> Result<()> {
    grad.expect_shape("adadelta step", param.shape())?;
    if slot.sq_grad.len() != param.len() {
        return Err(Error::Internal("adadelta accumulator shape mismatch".into()));
    }
    let (lr, rho, eps) = (F::of(lr), F::of(rho), F::of(eps));
    let one_minus = F::one() - rho;
    for (((p, &g), eg), ed) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(slot.sq_grad.iter_mut())
        .zip(slot.sq_update.iter_mut())
    {
        *eg = rho * *eg + one_minus * g * g;
        let delta = (*ed + eps).sqrt() / (*eg + eps).sqrt() * g;
        *ed = rho * *ed + one_minus * delta * delta;
        *p = *p - lr * delta;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::scalar(v)
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0.1, 0, 200), 0.1);
        assert!(cosine_lr(0.1, 200, 200).abs() < 1e-18);
        assert!((cosine_lr(0.1, 100, 200) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn sgd_three_steps_match_unrolled_recurrence() {
        let mut p = scalar(1.0);
        let trainable = [true];
        let mut opt = OptimizerState::new(OptimizerConfig::sgd_cosine(0.2, 3), &[&p], &trainable).unwrap();
        // loss = p², grad = 2p
        for _ in 0..3 {
            let g = scalar(2.0 * p.data()[0]);
            opt.step(&mut [&mut p], &[Some(&g)]).unwrap();
            opt.end_epoch();
        }
        let pi = std::f64::consts::PI;
        let mut want = 1.0f64;
        for t in 0..3 {
            let lr = 0.5 * 0.2 * (1.0 + (pi * t as f64 / 3.0).cos());
            want -= lr * 2.0 * want;
        }
        assert!((p.data()[0] - want).abs() < 1e-15);
        let g = scalar(1.0);
        assert!(matches!(
            opt.step(&mut [&mut p], &[Some(&g)]),
            Err(Error::ScheduleExhausted { step: 3, total: 3 })
        ));
    }

    #[test]
    fn adadelta_zero_gradient_is_noop() {
        let mut p = scalar(0.4);
        let mut opt = OptimizerState::new(OptimizerConfig::adadelta(0.03), &[&p], &[true]).unwrap();
        opt.step(&mut [&mut p], &[Some(&scalar(0.0))]).unwrap();
        assert_eq!(p.data()[0], 0.4);
    }

    #[test]
    fn adadelta_single_step_closed_form() {
        let mut p = scalar(0.4);
        let mut opt = OptimizerState::new(OptimizerConfig::adadelta(0.03), &[&p], &[true]).unwrap();
        opt.step(&mut [&mut p], &[Some(&scalar(2.0))]).unwrap();
        // E[g²] = 0.05·4 = 0.2; Δ = √1e-6 / √(0.2 + 1e-6) · 2
        let delta = (1e-6f64).sqrt() / (0.2f64 + 1e-6).sqrt() * 2.0;
        assert!((p.data()[0] - (0.4 - 0.03 * delta)).abs() < 1e-16);
        let slot = opt.slots[0].as_ref().unwrap();
        assert!((slot.sq_update[0] - 0.05 * delta * delta).abs() < 1e-20);
    }

    #[test]
    fn frozen_parameters_have_no_accumulator_and_never_move() {
        let mut a = scalar(1.0);
        let mut b = scalar(2.0);
        let mut opt = OptimizerState::new(OptimizerConfig::adadelta(0.03), &[&a, &b], &[false, true]).unwrap();
        assert!(opt.slots[0].is_none());
        assert!(opt.slots[1].is_some());
        let g = scalar(1.0);
        opt.step(&mut [&mut a, &mut b], &[Some(&g), Some(&g)]).unwrap();
        assert_eq!(a.data()[0].to_bits(), 1.0f64.to_bits());
        assert_ne!(b.data()[0], 2.0);

        let mut sgd = OptimizerState::new(OptimizerConfig::sgd_cosine(0.1, 5), &[&a, &b], &[false, true]).unwrap();
        sgd.step(&mut [&mut a, &mut b], &[Some(&g), Some(&g)]).unwrap();
        assert_eq!(a.data()[0].to_bits(), 1.0f64.to_bits());
    }
}
