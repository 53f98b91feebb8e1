use serde::{Deserialize, Serialize};

use crate::diffcore::{gemm, Layout, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub temperature: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { temperature: 0.5 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        Ok(())
    }
}

/// `2N × d` projected embeddings; rows `2i` and `2i + 1` are a positive pair.
#[derive(Debug, Clone)]
pub struct EmbeddingBatch<F>(Tensor<F>);

impl<F: Scalar> EmbeddingBatch<F> {
    pub fn new(z: Tensor<F>) -> Result<Self> {
        z.expect_rank("nt_xent", 2)?;
        let rows = z.dim(0);
        if !rows.is_multiple_of(2) {
            return Err(Error::dim("nt_xent", "rows", "an even count (pairs)", rows));
        }
        if rows < 4 {
            return Err(Error::Config(format!(
                "NT-Xent needs at least 2 pairs for negatives, got {}",
                rows / 2
            )));
        }
        let d = z.dim(1);
        if let Some(row) = z
            .data()
            .chunks_exact(d)
            .position(|r| r.iter().all(|&v| v == F::zero()))
        {
            return Err(Error::Data(format!("embedding row {row} has zero norm")));
        }
        if !z.is_finite() {
            return Err(Error::Data("embedding batch contains non-finite values".into()));
        }
        Ok(EmbeddingBatch(z))
    }

    pub fn pairs(&self) -> usize {
        self.0.dim(0) / 2
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.0
    }
}

#[derive(Debug, Clone)]
pub struct NtXent<F> {
    /// Mean over all `2N` anchors.
    pub loss: F,
    /// Per-anchor loss `ℓ(i, partner(i))`.
    pub per_anchor: Vec<F>,
    /// `d loss / d z`, same shape as the batch.
    pub grad: Tensor<F>,
}

#[inline]
fn partner(i: usize) -> usize {
    i ^ 1
}

/// Normalized temperature-scaled cross-entropy:
/// `ℓ(i, j) = -log( exp(cos(z_i, z_j)/τ) / Σ_{k≠i} exp(cos(z_i, z_k)/τ) )`,
/// averaged over both orderings of every positive pair.
pub fn nt_xent<F: Scalar>(batch: &EmbeddingBatch<F>, cfg: &ContrastiveConfig) -> Result<NtXent<F>> {
    cfg.validate()?;
    let z = batch.tensor();
    let (m, d) = (z.dim(0), z.dim(1));
    let inv_tau = F::of(1.0 / cfg.temperature);

    let norms: Vec<F> = z
        .data()
        .chunks_exact(d)
        .map(|r| r.iter().map(|&v| v * v).sum::<F>().sqrt())
        .collect();
    let mut u = z.data().to_vec();
    for (row, &n) in u.chunks_exact_mut(d).zip(&norms) {
        row.iter_mut().for_each(|v| *v = *v / n);
    }

    // s = U Uᵀ / τ
    let mut s = vec![F::zero(); m * m];
    gemm(m, d, m, inv_tau, &u, Layout::row_major(d), &u, Layout::transposed(d), F::zero(), &mut s, Layout::row_major(m));

    let inv_count = F::one() / F::of(m as f64);
    let mut per_anchor = Vec::with_capacity(m);
    // g[i, k] = d loss / d s[i, k]
    let mut g = vec![F::zero(); m * m];
    for i in 0..m {
        let row = &s[i * m..(i + 1) * m];
        let mx = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(F::neg_infinity(), F::max);
        let sum: F = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| (v - mx).exp())
            .sum();
        let lse = mx + sum.ln();
        // mx - s_pos is exactly zero when every similarity ties
        per_anchor.push(sum.ln() + (mx - row[partner(i)]));
        let grow = &mut g[i * m..(i + 1) * m];
        for k in 0..m {
            if k != i {
                grow[k] = (row[k] - lse).exp() * inv_count;
            }
        }
        grow[partner(i)] = grow[partner(i)] - inv_count;
    }
    let loss = pairwise_sum(&per_anchor) * inv_count;

    // dU = (G + Gᵀ) U / τ
    let mut sym = g.clone();
    for i in 0..m {
        for k in 0..m {
            sym[i * m + k] = g[i * m + k] + g[k * m + i];
        }
    }
    let mut du = vec![F::zero(); m * d];
    gemm(m, m, d, inv_tau, &sym, Layout::row_major(m), &u, Layout::row_major(d), F::zero(), &mut du, Layout::row_major(d));

    // Through the normalization: dz = (I - u uᵀ) du / ‖z‖
    for ((drow, urow), &n) in du.chunks_exact_mut(d).zip(u.chunks_exact(d)).zip(&norms) {
        let dot: F = drow.iter().zip(urow).map(|(&a, &b)| a * b).sum();
        for (dv, &uv) in drow.iter_mut().zip(urow) {
            *dv = (*dv - dot * uv) / n;
        }
    }

    Ok(NtXent {
        loss,
        per_anchor,
        grad: Tensor::new(vec![m, d], du)?,
    })
}

/// Sums halves recursively, so `2^k` equal terms add without rounding.
fn pairwise_sum<F: Scalar>(v: &[F]) -> F {
    match v.len() {
        0 => F::zero(),
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = SeedTree::new(seed).stream("test", &[]);
        Tensor::from_fn(shape, |_| StandardNormal.sample(&mut rng))
    }

    /// Double loop over the definition.
    pub(crate) fn oracle(z: &Tensor<f64>, tau: f64) -> f64 {
        let (m, d) = (z.dim(0), z.dim(1));
        let row = |i: usize| &z.data()[i * d..(i + 1) * d];
        let cos = |a: &[f64], b: &[f64]| {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        };
        let mut total = 0.0;
        for i in 0..m {
            let j = i ^ 1;
            let num = (cos(row(i), row(j)) / tau).exp();
            let mut den = 0.0;
            for k in 0..m {
                if k != i {
                    den += (cos(row(i), row(k)) / tau).exp();
                }
            }
            total += -(num / den).ln();
        }
        total / m as f64
    }

    #[test]
    fn identical_embeddings_give_log_2n_minus_1() {
        let z = Tensor::<f64>::full(&[4, 3], 0.7);
        let out = nt_xent(&EmbeddingBatch::new(z).unwrap(), &ContrastiveConfig::default()).unwrap();
        assert_eq!(out.loss, 3f64.ln());
    }

    #[test]
    fn matches_double_loop() {
        let z = randn(&[4, 5], 1);
        let out = nt_xent(&EmbeddingBatch::new(z.clone()).unwrap(), &ContrastiveConfig { temperature: 0.5 }).unwrap();
        assert!((out.loss - oracle(&z, 0.5)).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z = randn(&[6, 4], 2);
        let cfg = ContrastiveConfig { temperature: 0.3 };
        let out = nt_xent(&EmbeddingBatch::new(z.clone()).unwrap(), &cfg).unwrap();
        for j in 0..z.len() {
            let mut p = z.clone();
            let mut m = z.clone();
            p.data_mut()[j] += 1e-5;
            m.data_mut()[j] -= 1e-5;
            let fd = (oracle(&p, 0.3) - oracle(&m, 0.3)) / 2e-5;
            let a = out.grad.data()[j];
            let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-8);
            assert!(rel < 1e-5, "coord {j}: {a} vs {fd}");
        }
    }

    #[test]
    fn rejects_zero_rows_and_single_pair() {
        let mut z = randn(&[4, 3], 3);
        z.data_mut()[6..9].iter_mut().for_each(|v| *v = 0.0);
        let err = EmbeddingBatch::new(z).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(matches!(EmbeddingBatch::new(randn(&[2, 3], 4)), Err(Error::Config(_))));
    }
}
