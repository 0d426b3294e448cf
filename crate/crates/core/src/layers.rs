//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer keeps its trainable tensors in plain fields. Gradients are
//! accumulated into a second instance of the same type (see
//! [`Linear::zeros_like`]), so a model and its gradient share one layout.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::math;
use crate::tensor::Tensor2;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}

/// Derivative of the sigmoid expressed through its output.
#[inline]
pub fn sigmoid_grad_from_output(y: f64) -> f64 {
    y * (1.0 - y)
}

#[inline]
pub fn tanh(x: f64) -> f64 {
    math::tanh(x)
}

#[inline]
pub fn tanh_grad_from_output(y: f64) -> f64 {
    1.0 - y * y
}

#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor2,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Tensor2, bias: Vec<f64>) -> Result<Self> {
        if weight.rows() != bias.len() {
            return Err(shape_err(format!(
                "bias of length {} for a layer with {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    /// Uniform Xavier/Glorot initialization, zero bias.
    pub fn init<R: Rng + ?Sized>(out_dim: usize, in_dim: usize, rng: &mut R) -> Self {
        let bound = math::sqrt(6.0 / (in_dim + out_dim) as f64);
        let data = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            weight: Tensor2::from_vec(out_dim, in_dim, data).expect("sized above"),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Tensor2::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.out_dim(), self.in_dim())
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.weight.matvec(x)?;
        math::axpy(1.0, &self.bias, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients into `grads` and returns `dL/dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grads: &mut Linear) -> Vec<f64> {
        grads.weight.add_outer(dy, x);
        math::axpy(1.0, dy, &mut grads.bias);
        let mut dx = vec![0.0; self.in_dim()];
        self.weight.matvec_t_acc(dy, &mut dx);
        dx
    }
}

/// `W x + b` as a free function.
pub fn fc_forward(x: &[f64], weight: &Tensor2, bias: &[f64]) -> Result<Vec<f64>> {
    if weight.rows() != bias.len() {
        return Err(shape_err(format!(
            "bias of length {} for {} outputs",
            bias.len(),
            weight.rows()
        )));
    }
    let mut y = weight.matvec(x)?;
    math::axpy(1.0, bias, &mut y);
    Ok(y)
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Infer,
}

/// Batch normalization over the rows of a `B x k` batch.
///
/// In train mode each column is normalized with the batch statistics and the
/// running estimates are updated as `running = (1 - momentum) * running +
/// momentum * batch`; the running variance uses the unbiased batch variance.
/// Infer mode normalizes with the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: BnMode,
}

/// Values saved by the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: BnMode,
    normalized: Tensor2,
    inv_std: Vec<f64>,
}

impl BnCache {
    pub fn normalized(&self) -> &Tensor2 {
        &self.normalized
    }
}

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            mode: BnMode::Train,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let dim = self.dim();
        Self {
            gamma: vec![0.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![0.0; dim],
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, batch: &Tensor2) -> Result<()> {
        if batch.cols() != self.dim() {
            return Err(shape_err(format!(
                "batch has {} columns, batch norm expects {}",
                batch.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Forward pass in the current mode. Train mode updates the running
    /// statistics.
    pub fn forward(&mut self, batch: &Tensor2) -> Result<(Tensor2, BnCache)> {
        self.forward_with(batch, true)
    }

    /// Like [`forward`](Self::forward) but leaves the running statistics
    /// untouched, which makes loss evaluation side-effect free.
    pub fn forward_frozen(&self, batch: &Tensor2) -> Result<(Tensor2, BnCache)> {
        let mut scratch = self.clone();
        scratch.forward_with(batch, false)
    }

    fn forward_with(&mut self, batch: &Tensor2, update_running: bool) -> Result<(Tensor2, BnCache)> {
        self.check(batch)?;
        let (b, k) = (batch.rows(), batch.cols());
        let (mean, var) = match self.mode {
            BnMode::Train => {
                if b < 2 {
                    return Err(Error::DegenerateBatch(b));
                }
                let mean = batch.mean_row();
                let mut var = vec![0.0; k];
                for r in batch.row_iter() {
                    for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                        *v += (x - m) * (x - m);
                    }
                }
                var.iter_mut().for_each(|v| *v /= b as f64);
                if update_running {
                    let unbias = b as f64 / (b - 1) as f64;
                    for j in 0..k {
                        self.running_mean[j] =
                            (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                        self.running_var[j] = (1.0 - self.momentum) * self.running_var[j]
                            + self.momentum * var[j] * unbias;
                    }
                }
                (mean, var)
            }
            BnMode::Infer => (self.running_mean.clone(), self.running_var.clone()),
        };
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / math::sqrt(v + self.epsilon))
            .collect();
        let mut normalized = Tensor2::zeros(b, k);
        let mut out = Tensor2::zeros(b, k);
        for i in 0..b {
            let x = batch.row(i);
            let xn = normalized.row_mut(i);
            for j in 0..k {
                xn[j] = (x[j] - mean[j]) * inv_std[j];
            }
            let y = out.row_mut(i);
            for j in 0..k {
                y[j] = self.gamma[j] * xn[j] + self.beta[j];
            }
        }
        Ok((
            out,
            BnCache {
                mode: self.mode,
                normalized,
                inv_std,
            },
        ))
    }

    /// Single-vector inference with the running statistics.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(shape_err(format!(
                "vector of length {}, batch norm expects {}",
                x.len(),
                self.dim()
            )));
        }
        Ok((0..x.len())
            .map(|j| {
                let xn = (x[j] - self.running_mean[j]) / math::sqrt(self.running_var[j] + self.epsilon);
                self.gamma[j] * xn + self.beta[j]
            })
            .collect())
    }

    /// Accumulates `dgamma`, `dbeta` into `grads` and returns `dL/dbatch`.
    pub fn backward(&self, cache: &BnCache, dy: &Tensor2, grads: &mut BatchNorm) -> Tensor2 {
        let (b, k) = (dy.rows(), dy.cols());
        let xn = &cache.normalized;
        let mut sum_dy = vec![0.0; k];
        let mut sum_dy_xn = vec![0.0; k];
        for i in 0..b {
            for j in 0..k {
                let g = dy.get(i, j);
                sum_dy[j] += g;
                sum_dy_xn[j] += g * xn.get(i, j);
            }
        }
        math::axpy(1.0, &sum_dy, &mut grads.beta);
        math::axpy(1.0, &sum_dy_xn, &mut grads.gamma);

        let mut dx = Tensor2::zeros(b, k);
        match cache.mode {
            BnMode::Train => {
                let bf = b as f64;
                for i in 0..b {
                    for j in 0..k {
                        let scale = self.gamma[j] * cache.inv_std[j] / bf;
                        let v = bf * dy.get(i, j) - sum_dy[j] - xn.get(i, j) * sum_dy_xn[j];
                        dx.set(i, j, scale * v);
                    }
                }
            }
            BnMode::Infer => {
                for i in 0..b {
                    for j in 0..k {
                        dx.set(i, j, self.gamma[j] * cache.inv_std[j] * dy.get(i, j));
                    }
                }
            }
        }
        dx
    }
}
