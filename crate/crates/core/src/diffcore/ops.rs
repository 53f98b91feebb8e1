//! Forward and backward kernels.
//!
//! Batched operators take a leading batch axis: temporal tensors are
//! `[n, T, C]` (time-major), dense activations are `[n, features]`.
//! `conv1d_*` and `global_max_pool1d*` also accept an unbatched `[T, C]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{gemm, Layout, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// No padding, stride 1: output length `T - k + 1`.
    #[default]
    Valid,
    /// Zero padding so the output length equals `T`; the extra element for
    /// even kernels goes on the right.
    Same,
}

impl Padding {
    pub fn output_len(self, t: usize, k: usize) -> Option<usize> {
        match self {
            Padding::Valid => t.checked_sub(k).map(|d| d + 1),
            Padding::Same => Some(t),
        }
    }

    fn pads(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => {
                let left = (k - 1) / 2;
                (left, k - 1 - left)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Which gradients a backward call should produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradRequest {
    pub input: bool,
    pub weight: bool,
    pub bias: bool,
}

impl GradRequest {
    pub const ALL: GradRequest = GradRequest {
        input: true,
        weight: true,
        bias: true,
    };
}

/// Gradients of a parameterized operator; `None` where not requested.
#[derive(Debug, Clone)]
pub struct LayerGrads<F> {
    pub input: Option<Tensor<F>>,
    pub weight: Option<Tensor<F>>,
    pub bias: Option<Tensor<F>>,
}

struct TemporalShape {
    batch: usize,
    time: usize,
    channels: usize,
    batched: bool,
}

fn temporal_shape<F: Scalar>(op: &'static str, x: &Tensor<F>) -> Result<TemporalShape> {
    match *x.shape() {
        [t, c] => Ok(TemporalShape {
            batch: 1,
            time: t,
            channels: c,
            batched: false,
        }),
        [n, t, c] => Ok(TemporalShape {
            batch: n,
            time: t,
            channels: c,
            batched: true,
        }),
        _ => Err(Error::dim(op, "rank", "2 or 3", x.rank())),
    }
}

fn temporal_tensor<F: Scalar>(s: &TemporalShape, time: usize, channels: usize, data: Vec<F>) -> Tensor<F> {
    let shape = if s.batched {
        vec![s.batch, time, channels]
    } else {
        vec![time, channels]
    };
    Tensor::new(shape, data).expect("kernel produced consistent shape")
}

fn check_conv<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    padding: Padding,
) -> Result<(TemporalShape, usize, usize, usize)> {
    let s = temporal_shape("conv1d", x)?;
    kernel.expect_rank("conv1d", 3)?;
    let (k, c_in, c_out) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    if c_in != s.channels {
        return Err(Error::dim("conv1d", "input channels", c_in, s.channels));
    }
    let t_out = padding
        .output_len(s.time, k)
        .ok_or_else(|| Error::dim("conv1d", "time", format!(">= kernel size {k}"), s.time))?;
    Ok((s, k, c_out, t_out))
}

/// Copy of `x` zero-padded along time, as flat `[n, T + k - 1, C]`; borrowed for valid.
fn padded<'a, F: Scalar>(x: &'a Tensor<F>, s: &TemporalShape, k: usize, padding: Padding) -> std::borrow::Cow<'a, [F]> {
    let (left, right) = padding.pads(k);
    if left == 0 && right == 0 {
        return std::borrow::Cow::Borrowed(x.data());
    }
    let tp = s.time + left + right;
    let c = s.channels;
    let mut out = vec![F::zero(); s.batch * tp * c];
    for b in 0..s.batch {
        let src = &x.data()[b * s.time * c..(b + 1) * s.time * c];
        out[(b * tp + left) * c..(b * tp + left + s.time) * c].copy_from_slice(src);
    }
    std::borrow::Cow::Owned(out)
}

/// `out[t, o] = bias[o] + Σ_{j<k, i<C_in} x[t + j, i] · kernel[j, i, o]`.
pub fn conv1d_forward<F: Scalar>(
    x: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: &Tensor<F>,
    padding: Padding,
) -> Result<Tensor<F>> {
    let (s, k, c_out, t_out) = check_conv(x, kernel, padding)?;
    bias.expect_shape("conv1d bias", &[c_out])?;
    let xp = padded(x, &s, k, padding);
    let c_in = s.channels;
    let (left, right) = padding.pads(k);
    let tp = s.time + left + right;
    let kc = k * c_in;
    let mut out = vec![F::zero(); s.batch * t_out * c_out];
    for b in 0..s.batch {
        let ob = &mut out[b * t_out * c_out..(b + 1) * t_out * c_out];
        for row in ob.chunks_exact_mut(c_out) {
            row.copy_from_slice(bias.data());
        }
        let xb = &xp[b * tp * c_in..(b + 1) * tp * c_in];
        gemm(
            t_out,
            kc,
            c_out,
            F::one(),
            xb,
            Layout::strided(c_in, 1),
            kernel.data(),
            Layout::row_major(c_out),
            F::one(),
            ob,
            Layout::row_major(c_out),
        );
    }
    Ok(temporal_tensor(&s, t_out, c_out, out))
}

/// Analytic gradients of [`conv1d_forward`].
///
/// `x` and `kernel` are the cached forward operands; a missing operand that
/// the requested gradients depend on is an internal-consistency error.
pub fn conv1d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    x: Option<&Tensor<F>>,
    kernel: Option<&Tensor<F>>,
    padding: Padding,
    want: GradRequest,
) -> Result<LayerGrads<F>> {
    let kernel = kernel.ok_or_else(|| Error::Internal("conv1d backward: kernel not cached".into()))?;
    kernel.expect_rank("conv1d backward", 3)?;
    let (k, c_in, c_out) = (kernel.dim(0), kernel.dim(1), kernel.dim(2));
    let gs = temporal_shape("conv1d backward", grad_out)?;
    if gs.channels != c_out {
        return Err(Error::dim("conv1d backward", "output channels", c_out, gs.channels));
    }
    let t_out = gs.time;
    let time = match padding {
        Padding::Valid => t_out + k - 1,
        Padding::Same => t_out,
    };
    let tp = t_out + k - 1;
    let kc = k * c_in;
    let g = grad_out.data();

    let bias = want.bias.then(|| {
        let mut db = vec![F::zero(); c_out];
        for row in g.chunks_exact(c_out) {
            db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
        }
        Tensor::new(vec![c_out], db).expect("bias shape")
    });

    let weight = if want.weight {
        let x = x.ok_or_else(|| Error::Internal("conv1d backward: input not cached".into()))?;
        let s = temporal_shape("conv1d backward", x)?;
        if s.channels != c_in || s.time != time || s.batch != gs.batch {
            return Err(Error::dim(
                "conv1d backward",
                "cached input",
                format!("[{}, {time}, {c_in}]", gs.batch),
                format!("{:?}", x.shape()),
            ));
        }
        let xp = padded(x, &s, k, padding);
        let mut dk = vec![F::zero(); kc * c_out];
        for b in 0..gs.batch {
            gemm(
                kc,
                t_out,
                c_out,
                F::one(),
                &xp[b * tp * c_in..(b + 1) * tp * c_in],
                Layout::strided(1, c_in),
                &g[b * t_out * c_out..(b + 1) * t_out * c_out],
                Layout::row_major(c_out),
                F::one(),
                &mut dk,
                Layout::row_major(c_out),
            );
        }
        Some(Tensor::new(vec![k, c_in, c_out], dk).expect("kernel shape"))
    } else {
        None
    };

    let input = if want.input {
        let (left, _) = padding.pads(k);
        let mut dp = vec![F::zero(); t_out * kc];
        let mut dx = vec![F::zero(); gs.batch * time * c_in];
        let mut dxp = vec![F::zero(); tp * c_in];
        for b in 0..gs.batch {
            gemm(
                t_out,
                c_out,
                kc,
                F::one(),
                &g[b * t_out * c_out..(b + 1) * t_out * c_out],
                Layout::row_major(c_out),
                kernel.data(),
                Layout::strided(1, c_out),
                F::zero(),
                &mut dp,
                Layout::row_major(kc),
            );
            dxp.iter_mut().for_each(|v| *v = F::zero());
            for t in 0..t_out {
                let dst = &mut dxp[t * c_in..t * c_in + kc];
                dst.iter_mut()
                    .zip(&dp[t * kc..(t + 1) * kc])
                    .for_each(|(d, &v)| *d = *d + v);
            }
            dx[b * time * c_in..(b + 1) * time * c_in]
                .copy_from_slice(&dxp[left * c_in..(left + time) * c_in]);
        }
        Some(temporal_tensor(&gs, time, c_in, dx))
    } else {
        None
    };

    Ok(LayerGrads { input, weight, bias })
}

pub fn relu<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    x.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// Gradient of ReLU given the forward output (or input; both share the sign pattern).
pub fn relu_backward<F: Scalar>(grad_out: &Tensor<F>, forward: &Tensor<F>) -> Result<Tensor<F>> {
    grad_out.expect_shape("relu backward", forward.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(forward.data())
        .map(|(&g, &y)| if y > F::zero() { g } else { F::zero() })
        .collect();
    Tensor::new(grad_out.shape().to_vec(), data)
}

/// `y = x · w + b` for `x: [n, in]`, `w: [in, out]`, `b: [out]`.
pub fn dense_forward<F: Scalar>(x: &Tensor<F>, w: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    x.expect_rank("dense", 2)?;
    w.expect_rank("dense weight", 2)?;
    let (n, d_in) = (x.dim(0), x.dim(1));
    let d_out = w.dim(1);
    if w.dim(0) != d_in {
        return Err(Error::dim("dense", "input features", w.dim(0), d_in));
    }
    b.expect_shape("dense bias", &[d_out])?;
    let mut y = vec![F::zero(); n * d_out];
    for row in y.chunks_exact_mut(d_out) {
        row.copy_from_slice(b.data());
    }
    gemm(
        n,
        d_in,
        d_out,
        F::one(),
        x.data(),
        Layout::row_major(d_in),
        w.data(),
        Layout::row_major(d_out),
        F::one(),
        &mut y,
        Layout::row_major(d_out),
    );
    Tensor::new(vec![n, d_out], y)
}

pub fn dense_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    x: Option<&Tensor<F>>,
    w: Option<&Tensor<F>>,
    want: GradRequest,
) -> Result<LayerGrads<F>> {
    grad_out.expect_rank("dense backward", 2)?;
    let (n, d_out) = (grad_out.dim(0), grad_out.dim(1));
    let g = grad_out.data();

    let bias = want.bias.then(|| {
        let mut db = vec![F::zero(); d_out];
        for row in g.chunks_exact(d_out) {
            db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
        }
        Tensor::new(vec![d_out], db).expect("bias shape")
    });

    let weight = if want.weight {
        let x = x.ok_or_else(|| Error::Internal("dense backward: input not cached".into()))?;
        x.expect_rank("dense backward", 2)?;
        if x.dim(0) != n {
            return Err(Error::dim("dense backward", "batch", n, x.dim(0)));
        }
        let d_in = x.dim(1);
        let mut dw = vec![F::zero(); d_in * d_out];
        gemm(
            d_in,
            n,
            d_out,
            F::one(),
            x.data(),
            Layout::transposed(d_in),
            g,
            Layout::row_major(d_out),
            F::zero(),
            &mut dw,
            Layout::row_major(d_out),
        );
        Some(Tensor::new(vec![d_in, d_out], dw)?)
    } else {
        None
    };

    let input = if want.input {
        let w = w.ok_or_else(|| Error::Internal("dense backward: weight not cached".into()))?;
        w.expect_rank("dense backward weight", 2)?;
        if w.dim(1) != d_out {
            return Err(Error::dim("dense backward", "output features", w.dim(1), d_out));
        }
        let d_in = w.dim(0);
        let mut dx = vec![F::zero(); n * d_in];
        gemm(
            n,
            d_out,
            d_in,
            F::one(),
            g,
            Layout::row_major(d_out),
            w.data(),
            Layout::transposed(d_out),
            F::zero(),
            &mut dx,
            Layout::row_major(d_in),
        );
        Some(Tensor::new(vec![n, d_in], dx)?)
    } else {
        None
    };

    Ok(LayerGrads { input, weight, bias })
}

/// Column maxima over time. Returns the pooled tensor and, per output cell,
/// the first time index attaining the maximum.
pub fn global_max_pool1d<F: Scalar>(x: &Tensor<F>) -> Result<(Tensor<F>, Vec<usize>)> {
    let s = temporal_shape("global_max_pool1d", x)?;
    let (t, c) = (s.time, s.channels);
    let mut out = Vec::with_capacity(s.batch * c);
    let mut argmax = Vec::with_capacity(s.batch * c);
    for b in 0..s.batch {
        let xb = &x.data()[b * t * c..(b + 1) * t * c];
        for ch in 0..c {
            let mut best = 0;
            for step in 1..t {
                if xb[step * c + ch] > xb[best * c + ch] {
                    best = step;
                }
            }
            argmax.push(best);
            out.push(xb[best * c + ch]);
        }
    }
    let shape = if s.batched { vec![s.batch, c] } else { vec![c] };
    Ok((Tensor::new(shape, out)?, argmax))
}

pub fn global_max_pool1d_backward<F: Scalar>(
    grad_out: &Tensor<F>,
    argmax: &[usize],
    time: usize,
) -> Result<Tensor<F>> {
    let (batch, c, batched) = match *grad_out.shape() {
        [c] => (1, c, false),
        [n, c] => (n, c, true),
        _ => return Err(Error::dim("global_max_pool1d backward", "rank", "1 or 2", grad_out.rank())),
    };
    if argmax.len() != batch * c {
        return Err(Error::Internal(format!(
            "global_max_pool1d backward: {} cached indices for {} outputs",
            argmax.len(),
            batch * c
        )));
    }
    let mut dx = vec![F::zero(); batch * time * c];
    for b in 0..batch {
        for ch in 0..c {
            let i = b * c + ch;
            dx[(b * time + argmax[i]) * c + ch] = grad_out.data()[i];
        }
    }
    let shape = if batched { vec![batch, time, c] } else { vec![time, c] };
    Tensor::new(shape, dx)
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (`0` or `1 / (1 - rate)`); eval mode or `rate == 0` is the identity and
/// records no mask.
pub fn dropout_forward<F: Scalar, R: Rng + ?Sized>(
    x: &Tensor<F>,
    rate: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor<F>, Option<Vec<F>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = F::of(1.0 / (1.0 - rate));
    let mask: Vec<F> = (0..x.len())
        .map(|_| if rng.random::<f64>() < rate { F::zero() } else { keep })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    Ok((Tensor::new(x.shape().to_vec(), data)?, Some(mask)))
}

pub fn dropout_backward<F: Scalar>(grad_out: &Tensor<F>, mask: Option<&[F]>) -> Result<Tensor<F>> {
    match mask {
        None => Ok(grad_out.clone()),
        Some(m) => {
            if m.len() != grad_out.len() {
                return Err(Error::Internal("dropout backward: mask length mismatch".into()));
            }
            let data = grad_out.data().iter().zip(m).map(|(&g, &k)| g * k).collect();
            Tensor::new(grad_out.shape().to_vec(), data)
        }
    }
}

/// Row-wise softmax of `[n, k]` logits.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    logits.expect_rank("softmax", 2)?;
    let k = logits.dim(1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z = z + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Row-wise log-softmax of `[n, k]` logits.
pub fn log_softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    logits.expect_rank("log_softmax", 2)?;
    let k = logits.dim(1);
    let mut out = logits.data().to_vec();
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
        row.iter_mut().for_each(|v| *v = *v - lse);
    }
    Tensor::new(logits.shape().to_vec(), out)
}
