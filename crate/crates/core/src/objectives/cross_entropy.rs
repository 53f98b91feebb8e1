use crate::diffcore::{ops, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossAndGrad<F> {
    pub loss: F,
    pub grad: Tensor<F>,
}

/// Mean of `-log softmax(logits)[label]` over the batch, with its gradient
/// with respect to the logits.
pub fn cross_entropy<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<LossAndGrad<F>> {
    logits.expect_rank("cross_entropy", 2)?;
    let (n, k) = (logits.dim(0), logits.dim(1));
    if labels.len() != n {
        return Err(Error::dim("cross_entropy", "labels", n, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
    }
    let log_p = ops::log_softmax(logits)?;
    let inv_n = F::one() / F::of(n as f64);
    let mut loss = F::zero();
    let mut grad = log_p.data().iter().map(|&v| v.exp() * inv_n).collect::<Vec<F>>();
    for (i, &label) in labels.iter().enumerate() {
        loss = loss - log_p.data()[i * k + label];
        grad[i * k + label] = grad[i * k + label] - inv_n;
    }
    Ok(LossAndGrad {
        loss: loss * inv_n,
        grad: Tensor::new(vec![n, k], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln2() {
        let logits = Tensor::<f64>::zeros(&[3, 2]);
        let out = cross_entropy(&logits, &[0, 1, 1]).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn saturated_correct_logits_give_zero() {
        let logits = Tensor::<f64>::new(vec![1, 2], vec![100.0, -100.0]).unwrap();
        let out = cross_entropy(&logits, &[0]).unwrap();
        assert!(out.loss.abs() < 1e-12);
    }

    #[test]
    fn matches_summation_oracle_and_finite_differences() {
        let data: Vec<f64> = (0..10).map(|i| ((i * 37 % 11) as f64 - 5.0) * 0.4).collect();
        let logits = Tensor::new(vec![5, 2], data.clone()).unwrap();
        let labels = [0, 1, 1, 0, 1];
        let out = cross_entropy(&logits, &labels).unwrap();
        let oracle = |d: &[f64]| -> f64 {
            let mut acc = 0.0;
            for (i, &l) in labels.iter().enumerate() {
                let (a, b) = (d[2 * i], d[2 * i + 1]);
                let z = a.exp() + b.exp();
                acc += -(d[2 * i + l].exp() / z).ln();
            }
            acc / labels.len() as f64
        };
        assert!((out.loss - oracle(&data)).abs() < 1e-12);
        for j in 0..data.len() {
            let mut p = data.clone();
            let mut m = data.clone();
            p[j] += 1e-5;
            m[j] -= 1e-5;
            let fd = (oracle(&p) - oracle(&m)) / 2e-5;
            assert!((fd - out.grad.data()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_range_label_is_data_error() {
        let logits = Tensor::<f64>::zeros(&[1, 2]);
        assert!(matches!(cross_entropy(&logits, &[2]), Err(Error::Data(_))));
    }
}
