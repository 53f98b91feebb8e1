//! Linear Centered Kernel Alignment between layer activations.

mod dump;
mod grid;

use crate::diffcore::{gemm, Layout, Tensor};
use crate::error::{Error, Result};

pub use dump::{ActivationDump, LayerActivations};
pub use grid::{conditioned_grid, similarity_grid, Condition, SimilarityGrid};

/// Column-centered copy of an `n × d` row-major matrix.
fn centered(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for row in x.chunks_exact(d) {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut out = x.to_vec();
    for row in out.chunks_exact_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    out
}

/// `‖Aᵀ B‖²_F` for column blocks `A: n × da`, `B: n × db`.
fn cross_frobenius_sq(a: &[f64], da: usize, b: &[f64], db: usize, n: usize) -> f64 {
    let mut c = vec![0.0; da * db];
    gemm(da, n, db, 1.0, a, Layout::transposed(da), b, Layout::row_major(db), 0.0, &mut c, Layout::row_major(db));
    c.iter().map(|v| v * v).sum()
}

/// A matrix prepared for repeated CKA evaluations: centered, with its
/// self-similarity norm `‖XᶜᵀXᶜ‖_F` cached.
#[derive(Debug, Clone)]
pub struct Centered {
    data: Vec<f64>,
    n: usize,
    d: usize,
    self_norm: f64,
}

impl Centered {
    pub fn new(x: &Tensor<f64>) -> Result<Self> {
        x.expect_rank("linear_cka", 2)?;
        let (n, d) = (x.dim(0), x.dim(1));
        if n < 2 {
            return Err(Error::UndefinedSimilarity(format!("CKA needs at least 2 rows, got {n}")));
        }
        if !x.is_finite() {
            return Err(Error::Data("CKA input contains non-finite values".into()));
        }
        let data = centered(x.data(), n, d);
        let self_norm = cross_frobenius_sq(&data, d, &data, d, n).sqrt();
        if self_norm == 0.0 {
            return Err(Error::UndefinedSimilarity("input has zero variance (all rows identical)".into()));
        }
        Ok(Centered { data, n, d, self_norm })
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cka(&self, other: &Centered) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::dim("linear_cka", "rows", self.n, other.n));
        }
        let cross = cross_frobenius_sq(&other.data, other.d, &self.data, self.d, self.n);
        Ok(cross / (self.self_norm * other.self_norm))
    }
}

/// `‖YᶜᵀXᶜ‖²_F / (‖XᶜᵀXᶜ‖_F · ‖YᶜᵀYᶜ‖_F)` with columns centered first.
pub fn linear_cka(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    if x.rank() == 2 && y.rank() == 2 && x.dim(0) != y.dim(0) {
        return Err(Error::dim("linear_cka", "rows", x.dim(0), y.dim(0)));
    }
    Centered::new(x)?.cka(&Centered::new(y)?)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn randn(n: usize, d: usize, seed: u64) -> Tensor<f64> {
        let mut rng = SeedTree::new(seed).stream("t", &[]);
        Tensor::from_fn(&[n, d], |_| StandardNormal.sample(&mut rng))
    }

    /// `HSIC(K, L) / sqrt(HSIC(K, K) · HSIC(L, L))` with `K = XXᵀ`,
    /// `HSIC(K, L) = tr(K H L H)` and `H = I − 11ᵀ/n`.
    pub(crate) fn hsic_oracle(x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
        let n = x.dim(0);
        let gram = |m: &Tensor<f64>| {
            let d = m.dim(1);
            let mut k = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    k[i * n + j] = (0..d).map(|c| m.data()[i * d + c] * m.data()[j * d + c]).sum();
                }
            }
            k
        };
        let h = |i: usize, j: usize| f64::from(u8::from(i == j)) - 1.0 / n as f64;
        let center = |k: &[f64]| {
            let mut out = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for a in 0..n {
                        for b in 0..n {
                            s += h(i, a) * k[a * n + b] * h(b, j);
                        }
                    }
                    out[i * n + j] = s;
                }
            }
            out
        };
        let hsic = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let (k, l) = (center(&gram(x)), center(&gram(y)));
        hsic(&k, &l) / (hsic(&k, &k) * hsic(&l, &l)).sqrt()
    }

    #[test]
    fn self_similarity_is_one() {
        let x = randn(10, 4, 1);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matches_hsic_oracle() {
        let x = randn(8, 3, 2);
        let y = randn(8, 5, 3);
        assert!((linear_cka(&x, &y).unwrap() - hsic_oracle(&x, &y)).abs() < 1e-10);
    }

    #[test]
    fn zero_variance_is_undefined() {
        let x = Tensor::<f64>::full(&[5, 3], 2.0);
        assert!(matches!(linear_cka(&x, &randn(5, 2, 1)), Err(Error::UndefinedSimilarity(_))));
    }

    #[test]
    fn row_mismatch_is_dimension_error() {
        assert!(matches!(linear_cka(&randn(5, 2, 1), &randn(6, 2, 1)), Err(Error::Dimension { .. })));
    }
}
