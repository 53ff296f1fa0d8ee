use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor2;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// A trainable value with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor2,
    pub grad: Tensor2,
}

impl Param {
    pub fn new(value: Tensor2) -> Self {
        let grad = Tensor2::zeros(value.rows(), value.cols());
        Self { value, grad }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self::new(Tensor2::from_vec(rows, cols, data).expect("shape by construction"))
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// `x·W + b`, with `b` broadcast over rows.
pub fn linear_forward(x: &Tensor2, w: &Param, b: &Param) -> Result<Tensor2> {
    if x.cols() != w.value.rows() {
        return Err(Error::Dimension {
            op: "linear_forward",
            left: x.shape(),
            right: w.value.shape(),
        });
    }
    if b.value.shape() != (1, w.value.cols()) {
        return Err(Error::Dimension {
            op: "linear_forward(bias)",
            left: w.value.shape(),
            right: b.value.shape(),
        });
    }
    let mut out = x.matmul(&w.value)?;
    let bias = b.value.data();
    for r in 0..out.rows() {
        for (o, &bv) in out.row_mut(r).iter_mut().zip(bias) {
            *o += bv;
        }
    }
    Ok(out)
}

/// Accumulates `xᵀ·g` into `w.grad` and the column sums of `g` into `b.grad`.
/// Returns `g·Wᵀ`.
pub fn linear_backward(
    x: &Tensor2,
    w: &mut Param,
    b: &mut Param,
    upstream: &Tensor2,
) -> Result<Tensor2> {
    accumulate_linear_grads(x, w, b, upstream)?;
    upstream.matmul_transposed(&w.value)
}

/// The parameter half of [`linear_backward`], for callers that do not need the
/// input gradient.
pub fn accumulate_linear_grads(
    x: &Tensor2,
    w: &mut Param,
    b: &mut Param,
    upstream: &Tensor2,
) -> Result<()> {
    if upstream.shape() != (x.rows(), w.value.cols()) || x.cols() != w.value.rows() {
        return Err(Error::Dimension {
            op: "linear_backward",
            left: x.shape(),
            right: upstream.shape(),
        });
    }
    x.add_transposed_matmul_into(upstream, &mut w.grad)?;
    b.grad.add_assign(&upstream.column_sums())?;
    Ok(())
}

/// A dense layer with weight `in×out` and bias `1×out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::uniform(fan_in, fan_out, fan_in, rng),
            bias: Param::uniform(1, fan_out, fan_in, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Param::new(Tensor2::zeros(fan_in, fan_out)),
            bias: Param::new(Tensor2::zeros(1, fan_out)),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn forward(&self, x: &Tensor2) -> Result<Tensor2> {
        linear_forward(x, &self.weight, &self.bias)
    }

    pub fn backward(&mut self, x: &Tensor2, upstream: &Tensor2) -> Result<Tensor2> {
        linear_backward(x, &mut self.weight, &mut self.bias, upstream)
    }

    pub fn params_mut(&mut self) -> [&mut Param; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Sigmoid,
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

pub fn activation_forward(x: &Tensor2, kind: Activation) -> Tensor2 {
    x.map(|v| kind.apply(v))
}

/// Chain rule through an elementwise activation evaluated at `x`.
pub fn activation_backward(x: &Tensor2, kind: Activation, upstream: &Tensor2) -> Result<Tensor2> {
    x.zip_map(upstream, |v, g| kind.derivative(v) * g)
}

pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    if scores.is_empty() {
        return Err(Error::arg("softmax of an empty vector"));
    }
    Ok(softmax_nonempty(scores))
}

pub(crate) fn softmax_nonempty(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨p, g⟩)`.
pub fn softmax_backward(probs: &[f64], upstream: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

fn check_distribution(name: &str, v: &[f64], tol: f64) -> Result<()> {
    if v.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::arg(format!("{name} has negative or non-finite entries")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(Error::arg(format!("{name} sums to {sum}, expected 1")));
    }
    Ok(())
}

/// `Σ p_c log(p_c / q_c)`. Zero-mass terms of `p` contribute nothing and `q` is
/// floored at [`LOG_FLOOR`].
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::arg(format!(
            "kl_divergence length mismatch: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution("p", p, 1e-6)?;
    check_distribution("q", q, 1e-6)?;
    Ok(kl_unchecked(p, q))
}

#[inline]
pub(crate) fn kl_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let kl: f64 = p
        .iter()
        .zip(q)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (pc.ln() - qc.max(LOG_FLOOR).ln()))
        .sum();
    // Rounding can leave a tiny negative value when p == q up to the last bit.
    kl.max(0.0)
}

/// `−Σ y_c log p_c`, with `p` floored at [`LOG_FLOOR`]. Soft targets allowed.
pub fn cross_entropy(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::arg(format!(
            "cross_entropy length mismatch: {} vs {}",
            pred.len(),
            target.len()
        )));
    }
    if target.iter().any(|&y| !(0.0..=1.0).contains(&y)) {
        return Err(Error::arg("cross_entropy target entries must lie in [0, 1]"));
    }
    check_distribution("target", target, 1e-6)?;
    Ok(cross_entropy_unchecked(pred, target))
}

#[inline]
pub(crate) fn cross_entropy_unchecked(pred: &[f64], target: &[f64]) -> f64 {
    -pred
        .iter()
        .zip(target)
        .filter(|(_, &y)| y > 0.0)
        .map(|(&p, &y)| y * p.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// Gradient of `cross_entropy(softmax(z), y)` with respect to `z`.
pub fn softmax_cross_entropy_grad(probs: &[f64], target: &[f64]) -> Vec<f64> {
    let mass: f64 = target.iter().sum();
    probs
        .iter()
        .zip(target)
        .map(|(p, y)| p * mass - y)
        .collect()
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Tensor2) -> Tensor2 {
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        let p = softmax_nonempty(logits.row(r));
        out.row_mut(r).copy_from_slice(&p);
    }
    out
}
