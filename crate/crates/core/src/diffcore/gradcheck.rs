//! Central finite-difference verification of analytic gradients.

use rand::seq::index;
use serde::Serialize;

use super::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeedTree;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so near-zero gradients are
    /// compared absolutely.
    pub abs_floor: f64,
    /// Check at most this many coordinates per parameter (sampled); `None` checks all.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

/// One evaluation of the function under test.
#[derive(Debug, Clone)]
pub struct Probe {
    pub loss: f64,
    /// Piecewise-linear region marker (see [`Tape::pattern_signature`](super::Tape::pattern_signature)).
    /// Coordinates whose perturbation changes it are skipped.
    pub pattern: u64,
    /// Analytic gradients, one per parameter; only read at the base point.
    /// `None` means identically zero.
    pub grads: Vec<Option<Tensor<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.violations == 0)
    }

    pub fn violations(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.violations > 0)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `eval`'s analytic gradients against central differences at
/// `params`. Violations are report content, not errors; errors come only
/// from `eval` itself.
pub fn grad_check<E>(names: &[&str], params: &[Tensor<f64>], cfg: &GradCheckConfig, mut eval: E) -> Result<GradCheckReport>
where
    E: FnMut(&[Tensor<f64>], bool) -> Result<Probe>,
{
    if names.len() != params.len() {
        return Err(Error::Internal("grad_check: one name per parameter required".into()));
    }
    let base = eval(params, true)?;
    if base.grads.len() != params.len() {
        return Err(Error::Internal(format!(
            "grad_check: {} gradients for {} parameters",
            base.grads.len(),
            params.len()
        )));
    }
    let seeds = SeedTree::new(cfg.seed);
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut report = GradCheckReport {
        tolerance: cfg.tolerance,
        params: Vec::with_capacity(params.len()),
    };

    for (pi, name) in names.iter().enumerate() {
        let len = params[pi].len();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < len => {
                let mut rng = seeds.stream("gradcheck", &[pi as u64]);
                let mut v = index::sample(&mut rng, len, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..len).collect(),
        };
        let mut check = ParamCheck {
            name: name.to_string(),
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            worst_index: None,
            violations: 0,
        };
        for &c in &coords {
            let original = work[pi].data()[c];
            work[pi].data_mut()[c] = original + cfg.step;
            let plus = eval(&work, false)?;
            work[pi].data_mut()[c] = original - cfg.step;
            let minus = eval(&work, false)?;
            work[pi].data_mut()[c] = original;
            if plus.pattern != base.pattern || minus.pattern != base.pattern {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * cfg.step);
            let analytic = base.grads[pi].as_ref().map_or(0.0, |g| g.data()[c]);
            let rel = relative_error(analytic, numeric, cfg.abs_floor);
            check.checked += 1;
            if rel > check.max_rel_error || check.worst_index.is_none() {
                check.max_rel_error = check.max_rel_error.max(rel);
                check.worst_index = Some(c);
            }
            if rel > cfg.tolerance || !rel.is_finite() {
                check.violations += 1;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ops::{dense_backward, dense_forward, GradRequest};

    /// loss = ½‖W x + b − t‖²
    fn quadratic(params: &[Tensor<f64>], flip_sign: bool) -> Result<Probe> {
        let x = Tensor::new(vec![3, 2], vec![0.3, -1.2, 0.8, 0.5, -0.4, 2.0])?;
        let target = Tensor::new(vec![3, 2], vec![1.0, 0.0, -1.0, 0.5, 0.2, 0.1])?;
        let y = dense_forward(&x, &params[0], &params[1])?;
        let resid: Vec<f64> = y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
        let g = Tensor::new(vec![3, 2], resid)?;
        let mut grads = dense_backward(&g, Some(&x), Some(&params[0]), GradRequest::ALL)?;
        if flip_sign {
            grads.weight.as_mut().unwrap().scale(-1.0);
        }
        Ok(Probe {
            loss,
            pattern: 0,
            grads: vec![grads.weight, grads.bias],
        })
    }

    fn linear_params() -> Vec<Tensor<f64>> {
        vec![
            Tensor::new(vec![2, 2], vec![0.5, -0.3, 0.1, 0.9]).unwrap(),
            Tensor::new(vec![2], vec![0.05, -0.2]).unwrap(),
        ]
    }

    #[test]
    fn quadratic_loss_is_exact() {
        let report = grad_check(&["w", "b"], &linear_params(), &GradCheckConfig::default(), |p, _| {
            quadratic(p, false)
        })
        .unwrap();
        assert!(report.passed());
        assert!(report.max_rel_error() < 1e-8, "{}", report.max_rel_error());
    }

    #[test]
    fn sign_flipped_backward_is_reported() {
        let report = grad_check(&["w", "b"], &linear_params(), &GradCheckConfig::default(), |p, _| {
            quadratic(p, true)
        })
        .unwrap();
        assert!(!report.passed());
        let bad: Vec<_> = report.violations().map(|p| p.name.as_str()).collect();
        assert_eq!(bad, vec!["w"]);
    }
}
