//! Two-view augmentation for contrastive pretraining: whole-window Gaussian
//! scaling followed by a random sign inversion.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Standard deviation of the scale factor `s ~ N(1, σ²)`.
    pub scale_sigma: f64,
    pub inversion_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            scale_sigma: 0.1,
            inversion_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_sigma > 0.0 && self.scale_sigma.is_finite()) {
            return Err(Error::Config(format!(
                "augment.scale_sigma must be positive, got {}",
                self.scale_sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.inversion_prob) {
            return Err(Error::Config(format!(
                "augment.inversion_prob must be in [0, 1], got {}",
                self.inversion_prob
            )));
        }
        Ok(())
    }

    /// Draws one view's multiplier: `s` or `−s`.
    pub fn draw_factor<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = Normal::new(1.0, self.scale_sigma)
            .expect("validated sigma")
            .sample(rng);
        if rng.random_bool(self.inversion_prob) {
            -s
        } else {
            s
        }
    }
}

/// Two independently augmented copies of `window`, view `a` drawn first.
pub fn make_views<F: Scalar, R: Rng + ?Sized>(
    window: &Tensor<F>,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<(Tensor<F>, Tensor<F>)> {
    cfg.validate()?;
    if !window.is_finite() {
        return Err(Error::Data("cannot augment a window with non-finite values".into()));
    }
    let fa = F::of(cfg.draw_factor(rng));
    let fb = F::of(cfg.draw_factor(rng));
    Ok((window.map(|v| v * fa), window.map(|v| v * fb)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    fn window() -> Tensor<f64> {
        Tensor::from_fn(&[6, 3], |i| i as f64 * 0.25 - 1.0)
    }

    #[test]
    fn degenerate_configs() {
        let mut rng = SeedTree::new(0).stream("t", &[]);
        let x = window();
        let tiny = AugmentConfig {
            scale_sigma: 1e-300,
            inversion_prob: 0.0,
        };
        let (a, b) = make_views(&x, &tiny, &mut rng).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
        let flip = AugmentConfig {
            scale_sigma: 1e-300,
            inversion_prob: 1.0,
        };
        let neg = x.map(|v| -v);
        let (a, b) = make_views(&x, &flip, &mut rng).unwrap();
        assert_eq!(a, neg);
        assert_eq!(b, neg);
    }

    #[test]
    fn seeded_calls_repeat() {
        let cfg = AugmentConfig::default();
        let x = window();
        let one = make_views(&x, &cfg, &mut SeedTree::new(5).stream("augment", &[1])).unwrap();
        let two = make_views(&x, &cfg, &mut SeedTree::new(5).stream("augment", &[1])).unwrap();
        assert_eq!(one.0, two.0);
        assert_eq!(one.1, two.1);
        assert_ne!(one.0, one.1);
    }

    #[test]
    fn rejects_non_finite_and_bad_config() {
        let mut rng = SeedTree::new(0).stream("t", &[]);
        let mut x = window();
        x.data_mut()[3] = f64::NAN;
        assert!(matches!(
            make_views(&x, &AugmentConfig::default(), &mut rng),
            Err(Error::Data(_))
        ));
        let bad = AugmentConfig {
            scale_sigma: 0.0,
            inversion_prob: 0.5,
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn factor_statistics() {
        let cfg = AugmentConfig::default();
        let mut rng = SeedTree::new(9).stream("t", &[]);
        let n = 20_000;
        let (mut sum_abs, mut flips) = (0.0, 0usize);
        for _ in 0..n {
            let f = cfg.draw_factor(&mut rng);
            sum_abs += f.abs();
            flips += usize::from(f < 0.0);
        }
        // |s| = s unless s < 0, which at σ = 0.1 is a 10σ event.
        assert!((sum_abs / n as f64 - 1.0).abs() < 3.0 * cfg.scale_sigma / 100.0);
        assert!((flips as f64 / n as f64 - cfg.inversion_prob).abs() < 0.02);
    }
}
